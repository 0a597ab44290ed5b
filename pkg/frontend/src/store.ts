import type { AlertView } from "./types";

/** Client-side alert state. The server is the source of truth: the store
 * only caches the last server view plus per-card in-flight guards; resolved
 * history is kept for the session only. */
export class ConsoleStore {
  private alerts = new Map<number, AlertView>();
  private inFlight = new Set<number>();
  history: AlertView[] = [];

  replacePending(list: AlertView[]): void {
    const fresh = new Set(list.map((a) => a.id));
    for (const [id, alert] of this.alerts) {
      if (!fresh.has(id)) {
        this.alerts.delete(id);
        // resolved elsewhere: move to session history
        if (!this.history.some((h) => h.id === id)) {
          this.history.unshift(alert);
        }
      }
    }
    for (const a of list) this.alerts.set(a.id, a);
  }

  pending(): AlertView[] {
    return [...this.alerts.values()].sort((a, b) => a.id - b.id);
  }

  /** Returns false when a request for this card is already in flight
   * (double-click guard). */
  begin(id: number): boolean {
    if (this.inFlight.has(id)) return false;
    this.inFlight.add(id);
    return true;
  }

  busy(id: number): boolean {
    return this.inFlight.has(id);
  }

  settle(id: number, resolved: AlertView | null): void {
    this.inFlight.delete(id);
    if (resolved) {
      this.alerts.delete(id);
      this.history.unshift(resolved);
    }
  }

  drop(id: number): void {
    this.inFlight.delete(id);
    const alert = this.alerts.get(id);
    this.alerts.delete(id);
    if (alert) this.history.unshift(alert);
  }
}
