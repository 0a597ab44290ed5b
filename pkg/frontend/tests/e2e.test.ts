// End-to-end: a real gateway process seeded with one impersonation alert,
// driven through the console exactly as a browser session would be. The
// document origin matches the gateway (the console is served same-origin
// in deployment), so the DOM's fetch needs no CORS.

// @vitest-environment happy-dom
// @vitest-environment-options { "url": "http://127.0.0.1:8907" }

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GatewayClient } from "../src/api";
import { AlertConsole } from "../src/console";

const PORT = 8907;
const BASE = `http://127.0.0.1:${PORT}`;

let workDir: string;
let server: ChildProcess | null = null;

async function waitFor(cond: () => Promise<boolean>, ms: number, what: string) {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    try {
      if (await cond()) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error(`timed out waiting for ${what}`);
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "aegis-e2e-"));
  const run = (args: string[]) =>
    execFileSync("python3", ["-m", "aegis.cli", ...args], { stdio: "pipe" });
  run([
    "simulate", "--layout", "single_bedroom", "--users", "1", "--days", "4",
    "--seed", "11", "--threats", "", "--out-dir", workDir,
  ]);
  run([
    "contexts", "--home", join(workDir, "home.json"),
    "--events", join(workDir, "train.jsonl"),
    "--out", join(workDir, "train-contexts.jsonl"),
  ]);
  run([
    "train", "--contexts", join(workDir, "train-contexts.jsonl"),
    "--out", join(workDir, "model.json"),
  ]);
  server = spawn(
    "python3",
    [
      "-m", "aegis.cli", "serve",
      "--home", join(workDir, "home.json"),
      "--model", join(workDir, "model.json"),
      "--apps", join(workDir, "contexts.json"),
      "--mode", "adaptive",
      "--listen", `127.0.0.1:${PORT}`,
      "--state-dir", join(workDir, "state"),
    ],
    { stdio: "ignore" },
  );
  await waitFor(
    async () => (await fetch(`${BASE}/model/stats`)).ok,
    30000,
    "gateway startup",
  );
  // seed exactly one impersonation alert: the smart lock opens with no
  // approach context while nobody is home
  const resp = await fetch(`${BASE}/events`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      ts: 10 * 86400000,
      entity: "LK1",
      reading: "active",
      source: "physical",
    }),
  });
  const body = await resp.json();
  expect(body.alerts.length).toBe(1);
}, 120000);

afterAll(() => {
  if (server) server.kill();
  rmSync(workDir, { recursive: true, force: true });
});

describe("console against a live gateway", () => {
  it("renders the seeded alert, round-trips Mark-Benign, and the model grows", async () => {
    const client = new GatewayClient(BASE);
    const statsBefore = await client.stats();
    expect(statsBefore.pending_alerts).toBe(1);

    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app")!;
    const ui = new AlertConsole(client, root, 500);
    const loop = ui.run(); // first poll cycle renders the pending alert
    await waitFor(
      async () => root.querySelectorAll("#pending .card").length === 1,
      5000,
      "alert card render",
    );
    const card = root.querySelector("#pending .card")!;
    expect(card.textContent).toContain("LK1");

    (card.querySelector("button.benign") as HTMLButtonElement).click();
    await waitFor(
      async () => root.querySelectorAll("#pending .card").length === 0,
      5000,
      "card resolution",
    );

    // the server is the source of truth for both effects
    const pending = await client.alerts("pending");
    expect(pending).toEqual([]);
    const statsAfter = await client.stats();
    expect(statsAfter.trained_snapshots).toBe(statsBefore.trained_snapshots + 2);

    ui.stop();
    await Promise.race([loop, new Promise((r) => setTimeout(r, 1500))]);
  }, 60000);
});
