import { AlreadyResolvedError, GatewayClient } from "./api";
import { ConsoleStore } from "./store";
import type { AlertView, Mode } from "./types";

const REASON_TEXT: Record<string, string> = {
  unseen_state: "unknown device state",
  unseen_transition: "impossible transition",
  below_threshold: "improbable transition",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtTime(ts: number): string {
  return new Date(ts).toISOString().replace("T", " ").slice(0, 19);
}

/** The action-management console: pending alert cards with one-click
 * feedback, a detection/adaptive mode toggle, and a live stats bar. */
export class AlertConsole {
  store = new ConsoleStore();
  private since = 0;
  private stopped = false;
  private connected = true;
  mode: Mode = "detection";

  constructor(
    private client: GatewayClient,
    private root: HTMLElement,
    private pollTimeoutMs = 10000,
  ) {
    this.root.innerHTML = `
      <header class="topbar">
        <h1>Aegis Console</h1>
        <span id="conn" class="dot live" title="connection"></span>
        <span id="stats" class="stats"></span>
        <button id="mode-toggle" class="mode"></button>
      </header>
      <main>
        <section>
          <h2>Pending alerts</h2>
          <div id="pending" class="cards"></div>
          <p id="empty" class="empty">No pending alerts.</p>
        </section>
        <section>
          <h2>Session history</h2>
          <div id="history" class="cards history"></div>
        </section>
      </main>`;
    this.root
      .querySelector("#mode-toggle")!
      .addEventListener("click", () => void this.toggleMode());
  }

  /** One full refresh from the server (alerts + stats + mode). */
  async refresh(): Promise<void> {
    const [alerts, stats, mode] = await Promise.all([
      this.client.alerts("pending"),
      this.client.stats(),
      this.client.mode(),
    ]);
    this.store.replacePending(alerts);
    this.mode = mode;
    this.renderStats(
      `${stats.trained_snapshots} snapshots · ${stats.observed_states} states · ` +
        `${stats.pending_alerts} pending`,
    );
    this.render();
  }

  /** Long-poll loop; each wakeup reconciles against the server. */
  async run(): Promise<void> {
    await this.refresh();
    while (!this.stopped) {
      try {
        const batch = await this.client.pollNotifications(this.since, this.pollTimeoutMs);
        this.since = Math.max(this.since, batch.latest);
        this.setConnected(true);
        await this.refresh();
      } catch (err) {
        this.setConnected(false);
        await new Promise((r) => setTimeout(r, 1000));
      }
    }
  }

  stop(): void {
    this.stopped = true;
  }

  async feedback(alertId: number, verdict: "malicious" | "benign"): Promise<void> {
    if (!this.store.begin(alertId)) return; // double-click guard
    this.render(); // buttons disable immediately
    try {
      const resolved = await this.client.sendFeedback(alertId, verdict);
      this.store.settle(alertId, resolved);
    } catch (err) {
      if (err instanceof AlreadyResolvedError) {
        this.store.drop(alertId); // resolved elsewhere; card leaves with a notice
        this.notice(`Alert ${alertId} was already resolved elsewhere.`);
      } else {
        this.store.settle(alertId, null);
        this.notice(`Feedback for alert ${alertId} failed; try again.`);
      }
    }
    this.render();
  }

  async toggleMode(): Promise<void> {
    const want: Mode = this.mode === "adaptive" ? "detection" : "adaptive";
    await this.client.setMode(want);
    this.mode = await this.client.mode(); // display always re-reads the server
    this.render();
  }

  // -- rendering ------------------------------------------------------------

  private setConnected(up: boolean): void {
    this.connected = up;
    const dot = this.root.querySelector("#conn");
    if (dot) dot.className = up ? "dot live" : "dot dead";
  }

  private renderStats(text: string): void {
    const bar = this.root.querySelector("#stats");
    if (bar) bar.textContent = text;
  }

  private notice(text: string): void {
    this.renderStats(text);
  }

  private card(alert: AlertView, resolved: boolean): HTMLElement {
    const card = el("article", "card");
    card.dataset.alertId = String(alert.id);
    const head = el("div", "card-head");
    head.appendChild(el("strong", "", `Alert #${alert.id}`));
    head.appendChild(el("span", "when", fmtTime(alert.timestamp)));
    card.appendChild(head);
    card.appendChild(
      el("p", "reason", REASON_TEXT[alert.reason] ?? alert.reason),
    );
    card.appendChild(
      el("p", "entities", `Devices: ${alert.implicated_entities.join(", ") || "none"}`),
    );
    if (alert.implicated_apps.length) {
      card.appendChild(el("p", "apps", `Apps: ${alert.implicated_apps.join(", ")}`));
    }
    card.appendChild(
      el("p", "bits", `${alert.prev_bits} → ${alert.next_bits}`),
    );
    if (resolved) {
      card.appendChild(el("p", "status", alert.status.replace("_", " ")));
      return card;
    }
    const actions = el("div", "actions");
    const benign = el("button", "benign", "Mark Benign");
    const malicious = el("button", "malicious", "Confirm Malicious");
    const busy = this.store.busy(alert.id);
    benign.disabled = busy;
    malicious.disabled = busy;
    benign.addEventListener("click", () => void this.feedback(alert.id, "benign"));
    malicious.addEventListener("click", () => void this.feedback(alert.id, "malicious"));
    actions.appendChild(malicious);
    actions.appendChild(benign);
    card.appendChild(actions);
    return card;
  }

  render(): void {
    const pendingBox = this.root.querySelector("#pending")!;
    const historyBox = this.root.querySelector("#history")!;
    const empty = this.root.querySelector("#empty") as HTMLElement;
    pendingBox.innerHTML = "";
    for (const alert of this.store.pending()) {
      pendingBox.appendChild(this.card(alert, false));
    }
    empty.style.display = this.store.pending().length ? "none" : "block";
    historyBox.innerHTML = "";
    for (const alert of this.store.history.slice(0, 20)) {
      historyBox.appendChild(this.card(alert, true));
    }
    const toggle = this.root.querySelector("#mode-toggle") as HTMLButtonElement;
    toggle.textContent =
      this.mode === "adaptive" ? "Mode: adaptive training" : "Mode: detection";
  }
}
