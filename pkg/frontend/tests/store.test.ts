import { describe, expect, it } from "vitest";

import { ConsoleStore } from "../src/store";
import type { AlertView } from "../src/types";

function alert(id: number, status = "pending"): AlertView {
  return {
    id,
    timestamp: 1000 * id,
    prev_bits: "000",
    next_bits: "001",
    reason: "unseen_state",
    probability: 0,
    implicated_entities: ["LK1"],
    implicated_apps: [],
    status,
    resolved_by: null,
  };
}

describe("ConsoleStore", () => {
  it("orders pending alerts by id", () => {
    const store = new ConsoleStore();
    store.replacePending([alert(3), alert(1), alert(2)]);
    expect(store.pending().map((a) => a.id)).toEqual([1, 2, 3]);
  });

  it("moves alerts resolved elsewhere into session history", () => {
    const store = new ConsoleStore();
    store.replacePending([alert(1), alert(2)]);
    store.replacePending([alert(2)]); // 1 disappeared server-side
    expect(store.pending().map((a) => a.id)).toEqual([2]);
    expect(store.history.map((a) => a.id)).toEqual([1]);
  });

  it("guards against double submission per card", () => {
    const store = new ConsoleStore();
    store.replacePending([alert(1)]);
    expect(store.begin(1)).toBe(true);
    expect(store.begin(1)).toBe(false); // second click is swallowed
    expect(store.busy(1)).toBe(true);
    store.settle(1, { ...alert(1), status: "marked_benign" });
    expect(store.pending()).toEqual([]);
    expect(store.history[0].status).toBe("marked_benign");
  });

  it("settle without a result re-arms the card", () => {
    const store = new ConsoleStore();
    store.replacePending([alert(1)]);
    store.begin(1);
    store.settle(1, null); // request failed; keep the card usable
    expect(store.pending().map((a) => a.id)).toEqual([1]);
    expect(store.begin(1)).toBe(true);
  });
});
