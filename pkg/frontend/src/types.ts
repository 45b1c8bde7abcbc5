// Shapes of the gateway API payloads the dashboard consumes.
// The UI never owns authoritative state: everything here is a view of
// what the API returned.

export interface Device {
  device_id: string;
  name: string;
  zone: string;
  status: "ACTIVE" | "QUARANTINED" | "REVOKED";
  epoch: number;
  last_seq: number;
  last_seen: number; // unix-ms, 0 = never
  address: string;
  cert_serial: string;
  cert_not_after: number; // unix-s
}

export interface PendingEnrollment {
  request_id: string;
  requested_name: string;
  subject: string;
  role: string;
  public_key: string;
  received_at: number; // unix-ms
  source_address: string;
  state: "PENDING" | "APPROVED" | "DENIED" | "EXPIRED";
}

export interface Alert {
  alert_id: number;
  rule: string;
  subject: string;
  severity: "INFO" | "WARN" | "CRIT";
  at: number;
  detail: string;
  acknowledged: boolean;
}

export interface Zone {
  name: string;
  range: string;
  role: string;
  capacity: number;
}

export interface TelemetryBucket {
  start_ms: number;
  value: number;
}

export type ConnectionStatus = "connecting" | "live" | "disconnected";

export interface StreamEvent {
  event: "alert" | "enrollment" | "device";
  data: unknown;
}
