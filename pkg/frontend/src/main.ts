import { GatewayClient } from "./api";
import { AlertConsole } from "./console";

// Served by the gateway itself at /console, so the API is same-origin.
const params = new URLSearchParams(location.search);
const base = params.get("api") ?? "";
const token = params.get("token");

const root = document.getElementById("app");
if (root) {
  const console_ = new AlertConsole(new GatewayClient(base, token), root);
  void console_.run();
}
