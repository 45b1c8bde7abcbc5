// Thin typed client for the gateway HTTP API. Every mutation carries the
// operator bearer token; non-2xx responses surface as ApiFault so callers
// can branch on status (401 -> token prompt, 409 -> re-sync).

import type { Alert, Device, PendingEnrollment, TelemetryBucket, Zone } from "./types.js";

export class ApiFault extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class GatewayClient {
  constructor(
    private base: string,
    private token: () => string | null,
    private fetchFn: FetchLike = fetch,
  ) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    const token = this.token();
    if (token) headers["Authorization"] = `Bearer ${token}`;
    const response = await this.fetchFn(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let code = "error";
      let message = text;
      try {
        const parsed = JSON.parse(text);
        code = parsed.code ?? code;
        message = parsed.message ?? message;
      } catch {
        // non-JSON error body: keep raw text
      }
      throw new ApiFault(response.status, code, message);
    }
    const ctype = response.headers.get("Content-Type") ?? "";
    return (ctype.includes("json") ? JSON.parse(text) : text) as T;
  }

  health(): Promise<{ status: string }> {
    return this.call("GET", "/api/v1/health");
  }

  async devices(): Promise<Device[]> {
    const payload = await this.call<{ devices: Device[] }>("GET", "/api/v1/devices");
    return payload.devices;
  }

  async pendingEnrollments(): Promise<PendingEnrollment[]> {
    const payload = await this.call<{ enrollments: PendingEnrollment[] }>(
      "GET",
      "/api/v1/enrollments?state=pending",
    );
    return payload.enrollments;
  }

  approve(requestId: string, zone: string): Promise<{ device: Device }> {
    return this.call("POST", `/api/v1/enrollments/${requestId}/approve`, { zone });
  }

  deny(requestId: string, reason: string): Promise<unknown> {
    return this.call("POST", `/api/v1/enrollments/${requestId}/deny`, { reason });
  }

  quarantine(deviceId: string): Promise<Device> {
    return this.call("POST", `/api/v1/devices/${deviceId}/quarantine`, {});
  }

  release(deviceId: string): Promise<Device> {
    return this.call("POST", `/api/v1/devices/${deviceId}/release`, {});
  }

  revoke(deviceId: string, reason: string): Promise<Device> {
    return this.call("POST", `/api/v1/devices/${deviceId}/revoke`, { reason });
  }

  async alerts(sinceMs = 0): Promise<Alert[]> {
    const payload = await this.call<{ alerts: Alert[] }>(
      "GET",
      `/api/v1/alerts?since=${sinceMs}`,
    );
    return payload.alerts;
  }

  acknowledge(alertId: number): Promise<unknown> {
    return this.call("POST", `/api/v1/alerts/${alertId}/ack`, {});
  }

  async zones(): Promise<Zone[]> {
    const payload = await this.call<{ zones: Zone[] }>("GET", "/api/v1/zones");
    return payload.zones;
  }

  putZone(name: string, range: string, role: string): Promise<Zone> {
    return this.call("PUT", `/api/v1/zones/${name}`, { range, role });
  }

  async telemetryMean(deviceId: string, fromMs: number, toMs: number): Promise<TelemetryBucket[]> {
    const query = `from=${fromMs}&to=${toMs}&bucket=60&agg=mean`;
    const payload = await this.call<{ series: TelemetryBucket[] }>(
      "GET",
      `/api/v1/telemetry/${deviceId}?${query}`,
    );
    return payload.series;
  }

  policyRules(): Promise<string> {
    return this.call("GET", "/api/v1/policy/rules");
  }
}
