// Pure HTML renderers: state in, markup string out. No DOM access here, so
// every view is testable offline against recorded API fixtures.

import { armKey, isArmed, sortDevices, type AppState } from "./state.js";
import type { Alert, Device, PendingEnrollment, Zone } from "./types.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function relativeTime(thenMs: number, nowMs: number): string {
  if (thenMs <= 0) return "never";
  const delta = Math.max(0, nowMs - thenMs);
  if (delta < 2_000) return "just now";
  if (delta < 60_000) return `${Math.floor(delta / 1000)}s ago`;
  if (delta < 3_600_000) return `${Math.floor(delta / 60_000)}m ago`;
  if (delta < 86_400_000) return `${Math.floor(delta / 3_600_000)}h ago`;
  return `${Math.floor(delta / 86_400_000)}d ago`;
}

function certExpiry(notAfterS: number, nowMs: number): string {
  const daysLeft = Math.floor((notAfterS * 1000 - nowMs) / 86_400_000);
  const date = new Date(notAfterS * 1000).toISOString().slice(0, 10);
  return daysLeft < 0 ? `expired ${date}` : `${date} (${daysLeft}d)`;
}

function confirmable(state: AppState, action: string, subject: string, label: string): string {
  const key = armKey(action, subject);
  if (isArmed(state, key)) {
    return (
      `<button class="danger armed" data-action="${action}" data-subject="${escapeHtml(subject)}">` +
      `confirm ${escapeHtml(label)}?</button>`
    );
  }
  return (
    `<button class="danger" data-action="${action}" data-subject="${escapeHtml(subject)}">` +
    `${escapeHtml(label)}</button>`
  );
}

export function renderDeviceTable(state: AppState, nowMs: number): string {
  if (state.devices.length === 0) {
    return `<div class="empty">No devices yet. Approve an enrollment to get started.</div>`;
  }
  const rows = sortDevices(state.devices)
    .map((device) => renderDeviceRow(state, device, nowMs))
    .join("");
  return (
    `<table class="devices"><thead><tr>` +
    `<th>device</th><th>zone</th><th>status</th><th>last seen</th>` +
    `<th>certificate</th><th>actions</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

function renderDeviceRow(state: AppState, device: Device, nowMs: number): string {
  const actions: string[] = [];
  if (device.status === "ACTIVE") {
    actions.push(confirmable(state, "quarantine", device.device_id, "quarantine"));
  }
  if (device.status === "QUARANTINED") {
    actions.push(
      `<button data-action="release" data-subject="${escapeHtml(device.device_id)}">release</button>`,
    );
  }
  if (device.status !== "REVOKED") {
    actions.push(confirmable(state, "revoke", device.device_id, "revoke"));
  }
  actions.push(
    `<button data-action="chart" data-subject="${escapeHtml(device.device_id)}">chart</button>`,
  );
  return (
    `<tr class="status-${device.status.toLowerCase()}" data-device="${escapeHtml(device.device_id)}">` +
    `<td><span class="name">${escapeHtml(device.name)}</span>` +
    `<span class="mono">${escapeHtml(device.device_id)} @ ${escapeHtml(device.address)}</span></td>` +
    `<td>${escapeHtml(device.zone)}</td>` +
    `<td><span class="badge badge-${device.status.toLowerCase()}">${device.status}</span></td>` +
    `<td>${relativeTime(device.last_seen, nowMs)}</td>` +
    `<td class="mono">${certExpiry(device.cert_not_after, nowMs)}</td>` +
    `<td class="actions">${actions.join(" ")}</td>` +
    `</tr>`
  );
}

export function renderEnrollmentQueue(state: AppState, nowMs: number): string {
  if (state.enrollments.length === 0) {
    return `<div class="empty">No pending enrollment requests.</div>`;
  }
  const zoneOptions = state.zones
    .filter((zone) => zone.role === "IOT" || zone.role === "REPEATER")
    .map((zone) => `<option value="${escapeHtml(zone.name)}">${escapeHtml(zone.name)}</option>`)
    .join("");
  const rows = [...state.enrollments]
    .sort((a, b) => a.received_at - b.received_at)
    .map(
      (request) =>
        `<tr data-request="${escapeHtml(request.request_id)}">` +
        `<td><span class="name">${escapeHtml(request.requested_name)}</span>` +
        `<span class="mono">${escapeHtml(request.source_address)}</span></td>` +
        `<td>${relativeTime(request.received_at, nowMs)}</td>` +
        `<td><select class="zone-pick" data-request="${escapeHtml(request.request_id)}">${zoneOptions}</select></td>` +
        `<td class="actions">` +
        `<button class="primary" data-action="approve" data-subject="${escapeHtml(request.request_id)}">approve</button> ` +
        confirmable(state, "deny", request.request_id, "deny") +
        `</td></tr>`,
    )
    .join("");
  return (
    `<table class="queue"><thead><tr>` +
    `<th>request</th><th>age</th><th>zone</th><th>decision</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderAlertFeed(state: AppState, nowMs: number): string {
  if (state.alerts.length === 0) {
    return `<div class="empty">No alerts.</div>`;
  }
  const items = state.alerts
    .map((alert) => {
      const ack = alert.acknowledged
        ? `<span class="acked">ack</span>`
        : `<button data-action="ack" data-subject="${alert.alert_id}">ack</button>`;
      return (
        `<li class="sev-${alert.severity.toLowerCase()}${alert.acknowledged ? " acknowledged" : ""}" ` +
        `data-alert="${alert.alert_id}">` +
        `<span class="badge badge-${alert.severity.toLowerCase()}">${alert.severity}</span>` +
        `<span class="rule">${escapeHtml(alert.rule)}</span>` +
        `<span class="detail">${escapeHtml(alert.detail)}</span>` +
        `<span class="when">${relativeTime(alert.at, nowMs)}</span>${ack}</li>`
      );
    })
    .join("");
  return `<ul class="alerts">${items}</ul>`;
}

export function renderZones(state: AppState): string {
  const rows = state.zones
    .map(
      (zone: Zone) =>
        `<tr><td>${escapeHtml(zone.name)}</td><td class="mono">${escapeHtml(zone.range)}</td>` +
        `<td>${escapeHtml(zone.role)}</td><td>${zone.capacity}</td></tr>`,
    )
    .join("");
  const table = state.zones.length
    ? `<table class="zones"><thead><tr><th>zone</th><th>range</th><th>role</th><th>capacity</th></tr></thead>` +
      `<tbody>${rows}</tbody></table>`
    : `<div class="empty">No zones defined.</div>`;
  return (
    table +
    `<form id="zone-form" class="zone-form">` +
    `<input name="name" placeholder="name" required> ` +
    `<input name="range" placeholder="10.10.4.0/24" required> ` +
    `<select name="role"><option>IOT</option><option>REPEATER</option><option>OPERATOR</option></select> ` +
    `<button class="primary" type="submit">add zone</button></form>`
  );
}

export function renderConnection(state: AppState): string {
  const labels: Record<string, string> = {
    live: "live",
    connecting: "connecting…",
    disconnected: "disconnected",
  };
  return (
    `<span class="conn conn-${state.connection}">${labels[state.connection]}</span>` +
    (state.stale ? `<span class="stale-flag">stale data</span>` : "")
  );
}

export function renderNotice(state: AppState): string {
  return state.notice ? `<div class="notice">${escapeHtml(state.notice)}</div>` : "";
}

export function countBadge(items: PendingEnrollment[] | Alert[]): string {
  return items.length ? ` <span class="count">${items.length}</span>` : "";
}
