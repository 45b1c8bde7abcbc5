// Pure view-state transitions. The dashboard holds no authoritative state:
// every function here folds an API payload or stream event into the previous
// view, and a hard refresh rebuilds the same view from API data alone.

import type { Alert, ConnectionStatus, Device, PendingEnrollment, Zone } from "./types.js";

export interface AppState {
  devices: Device[];
  enrollments: PendingEnrollment[];
  alerts: Alert[]; // newest first, deduped by alert_id
  zones: Zone[];
  connection: ConnectionStatus;
  stale: boolean; // a refresh failed and the lists shown are old
  notice: string | null;
  armed: string | null; // destructive action awaiting its confirmation click
  selectedDevice: string | null;
}

export function initialState(): AppState {
  return {
    devices: [],
    enrollments: [],
    alerts: [],
    zones: [],
    connection: "connecting",
    stale: false,
    notice: null,
    armed: null,
    selectedDevice: null,
  };
}

const STATUS_RANK: Record<string, number> = { QUARANTINED: 0, ACTIVE: 1, REVOKED: 2 };

/** Quarantined rows first, then most recently seen. */
export function sortDevices(devices: Device[]): Device[] {
  return [...devices].sort((a, b) => {
    const rank = (STATUS_RANK[a.status] ?? 3) - (STATUS_RANK[b.status] ?? 3);
    if (rank !== 0) return rank;
    if (b.last_seen !== a.last_seen) return b.last_seen - a.last_seen;
    return a.device_id.localeCompare(b.device_id);
  });
}

export function withDevices(state: AppState, devices: Device[]): AppState {
  return { ...state, devices, stale: false, notice: null };
}

export function withEnrollments(state: AppState, enrollments: PendingEnrollment[]): AppState {
  return { ...state, enrollments, stale: false };
}

export function withZones(state: AppState, zones: Zone[]): AppState {
  return { ...state, zones };
}

export function withAlerts(state: AppState, alerts: Alert[]): AppState {
  const sorted = [...alerts].sort((a, b) => b.alert_id - a.alert_id);
  return { ...state, alerts: sorted };
}

export function markStale(state: AppState, notice: string): AppState {
  return { ...state, stale: true, notice };
}

export function withConnection(state: AppState, connection: ConnectionStatus): AppState {
  return { ...state, connection };
}

/** Upsert one device row from a stream event or mutation response. */
export function applyDevice(state: AppState, device: Device): AppState {
  const rest = state.devices.filter((d) => d.device_id !== device.device_id);
  return { ...state, devices: [...rest, device] };
}

/** Stream enrollment events: pending requests join the queue, any terminal
 * state removes the row. */
export function applyEnrollment(state: AppState, request: PendingEnrollment): AppState {
  const rest = state.enrollments.filter((e) => e.request_id !== request.request_id);
  if (request.state === "PENDING") {
    return { ...state, enrollments: [...rest, request] };
  }
  return { ...state, enrollments: rest };
}

export function removeEnrollment(state: AppState, requestId: string): AppState {
  return {
    ...state,
    enrollments: state.enrollments.filter((e) => e.request_id !== requestId),
  };
}

/** Prepend a streamed alert; duplicates by alert_id are dropped (stream
 * reconnects replay nothing, but a refresh may overlap the stream). */
export function applyAlert(state: AppState, alert: Alert): AppState {
  if (state.alerts.some((a) => a.alert_id === alert.alert_id)) {
    return state;
  }
  return { ...state, alerts: [alert, ...state.alerts] };
}

export function acknowledgeAlert(state: AppState, alertId: number): AppState {
  return {
    ...state,
    alerts: state.alerts.map((a) =>
      a.alert_id === alertId ? { ...a, acknowledged: true } : a,
    ),
  };
}

// -- destructive-action confirmation ------------------------------------------
// First click arms the action; only the second click on the same key fires it.

export function armKey(action: string, subject: string): string {
  return `${action}:${subject}`;
}

export function arm(state: AppState, key: string): AppState {
  return { ...state, armed: key };
}

export function disarm(state: AppState): AppState {
  return { ...state, armed: null };
}

export function isArmed(state: AppState, key: string): boolean {
  return state.armed === key;
}

export function selectDevice(state: AppState, deviceId: string | null): AppState {
  return { ...state, selectedDevice: deviceId };
}
