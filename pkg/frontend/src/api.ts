import type { AlertView, Mode, ModelStats, NotificationBatch, Verdict } from "./types";

export class AlreadyResolvedError extends Error {
  constructor(alertId: number) {
    super(`alert ${alertId} is already resolved`);
  }
}

/** Thin fetch client over the gateway HTTP API. */
export class GatewayClient {
  constructor(
    private baseUrl: string = "",
    private token: string | null = null,
  ) {}

  private headers(json = false): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["Content-Type"] = "application/json";
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async check(resp: Response): Promise<Response> {
    if (!resp.ok) throw new Error(`${resp.status} ${await resp.text()}`);
    return resp;
  }

  async alerts(status = "pending"): Promise<AlertView[]> {
    const resp = await fetch(`${this.baseUrl}/alerts?status=${status}`, {
      headers: this.headers(),
    });
    return (await this.check(resp)).json();
  }

  async sendFeedback(alertId: number, verdict: Verdict): Promise<AlertView> {
    const resp = await fetch(`${this.baseUrl}/alerts/${alertId}/feedback`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ verdict }),
    });
    if (resp.status === 409) throw new AlreadyResolvedError(alertId);
    return (await this.check(resp)).json();
  }

  /** Long-poll for notifications newer than `since`. */
  async pollNotifications(since: number, timeoutMs = 10000): Promise<NotificationBatch> {
    const resp = await fetch(
      `${this.baseUrl}/notifications?since=${since}&timeout_ms=${timeoutMs}`,
      { headers: this.headers() },
    );
    return (await this.check(resp)).json();
  }

  async stats(): Promise<ModelStats> {
    const resp = await fetch(`${this.baseUrl}/model/stats`, { headers: this.headers() });
    return (await this.check(resp)).json();
  }

  async mode(): Promise<Mode> {
    const resp = await fetch(`${this.baseUrl}/mode`, { headers: this.headers() });
    return ((await (await this.check(resp)).json()) as { mode: Mode }).mode;
  }

  async setMode(mode: Mode): Promise<Mode> {
    const resp = await fetch(`${this.baseUrl}/mode`, {
      method: "PUT",
      headers: this.headers(true),
      body: JSON.stringify({ mode }),
    });
    return ((await (await this.check(resp)).json()) as { mode: Mode }).mode;
  }
}
