// Mirrors of the gateway's response shapes. The console renders only what
// the server sends; it never fabricates state.

export interface AlertView {
  id: number;
  timestamp: number;
  prev_bits: string;
  next_bits: string;
  reason: string;
  probability: number | null;
  implicated_entities: string[];
  implicated_apps: string[];
  status: string;
  resolved_by: string | null;
}

export interface NotificationView {
  seq: number;
  alert_id: number;
  timestamp: number;
}

export interface NotificationBatch {
  notifications: NotificationView[];
  latest: number;
}

export interface ModelStats {
  n: number;
  observed_states: number;
  transitions: number;
  trained_snapshots: number;
  last_retrain_ms: number | null;
  events_ingested: number;
  events_rejected: number;
  pending_alerts: number;
  mode: string;
}

export type Verdict = "malicious" | "benign";
export type Mode = "detection" | "adaptive";
