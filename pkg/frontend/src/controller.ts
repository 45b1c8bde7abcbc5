// The dashboard's brain, DOM-free: owns the AppState, talks to the API
// client, folds stream events in, and notifies the shell to re-render.
// Optimistic removals re-sync on 409 (someone else decided first).

import { ApiFault, GatewayClient } from "./api.js";
import {
  acknowledgeAlert,
  applyAlert,
  applyDevice,
  applyEnrollment,
  arm,
  armKey,
  disarm,
  initialState,
  isArmed,
  markStale,
  removeEnrollment,
  selectDevice,
  withAlerts,
  withConnection,
  withDevices,
  withEnrollments,
  withZones,
  type AppState,
} from "./state.js";
import type { Alert, ConnectionStatus, Device, PendingEnrollment, StreamEvent } from "./types.js";

export class DashboardController {
  state: AppState = initialState();
  onChange: (state: AppState) => void = () => {};
  onAuthFailure: () => void = () => {};

  constructor(private client: GatewayClient) {}

  private update(next: AppState): void {
    this.state = next;
    this.onChange(this.state);
  }

  private fault(error: unknown, context: string): void {
    if (error instanceof ApiFault && error.status === 401) {
      this.onAuthFailure();
      return;
    }
    const message = error instanceof Error ? error.message : String(error);
    this.update(markStale(this.state, `${context}: ${message}`));
  }

  // -- loading -------------------------------------------------------------

  async refreshAll(): Promise<void> {
    await Promise.all([
      this.refreshDevices(),
      this.refreshEnrollments(),
      this.refreshAlerts(),
      this.refreshZones(),
    ]);
  }

  async refreshDevices(): Promise<void> {
    try {
      this.update(withDevices(this.state, await this.client.devices()));
    } catch (error) {
      this.fault(error, "loading devices");
    }
  }

  async refreshEnrollments(): Promise<void> {
    try {
      this.update(withEnrollments(this.state, await this.client.pendingEnrollments()));
    } catch (error) {
      this.fault(error, "loading enrollments");
    }
  }

  async refreshAlerts(): Promise<void> {
    try {
      this.update(withAlerts(this.state, await this.client.alerts()));
    } catch (error) {
      this.fault(error, "loading alerts");
    }
  }

  async refreshZones(): Promise<void> {
    try {
      this.update(withZones(this.state, await this.client.zones()));
    } catch (error) {
      this.fault(error, "loading zones");
    }
  }

  // -- stream --------------------------------------------------------------

  handleStreamEvent(event: StreamEvent): void {
    if (event.event === "alert") {
      this.update(applyAlert(this.state, event.data as Alert));
    } else if (event.event === "enrollment") {
      this.update(applyEnrollment(this.state, event.data as PendingEnrollment));
    } else if (event.event === "device") {
      this.update(applyDevice(this.state, event.data as Device));
    }
  }

  handleConnection(status: ConnectionStatus): void {
    this.update(withConnection(this.state, status));
  }

  // -- operator actions -----------------------------------------------------

  async approve(requestId: string, zone: string): Promise<void> {
    const before = this.state;
    this.update(removeEnrollment(this.state, requestId)); // optimistic
    try {
      const payload = await this.client.approve(requestId, zone);
      this.update(applyDevice(this.state, payload.device));
    } catch (error) {
      if (error instanceof ApiFault && error.status === 409) {
        await this.refreshEnrollments(); // decided elsewhere: re-sync the queue
        return;
      }
      this.update(before); // restore the row; nothing was dropped silently
      this.fault(error, "approving enrollment");
    }
  }

  async deny(requestId: string, reason: string): Promise<void> {
    const key = armKey("deny", requestId);
    if (!isArmed(this.state, key)) {
      this.update(arm(this.state, key));
      return;
    }
    this.update(disarm(this.state));
    const before = this.state;
    this.update(removeEnrollment(this.state, requestId));
    try {
      await this.client.deny(requestId, reason);
    } catch (error) {
      if (error instanceof ApiFault && error.status === 409) {
        await this.refreshEnrollments();
        return;
      }
      this.update(before);
      this.fault(error, "denying enrollment");
    }
  }

  async quarantine(deviceId: string): Promise<void> {
    const key = armKey("quarantine", deviceId);
    if (!isArmed(this.state, key)) {
      this.update(arm(this.state, key));
      return;
    }
    this.update(disarm(this.state));
    try {
      this.update(applyDevice(this.state, await this.client.quarantine(deviceId)));
    } catch (error) {
      this.fault(error, "quarantining device");
    }
  }

  async release(deviceId: string): Promise<void> {
    try {
      this.update(applyDevice(this.state, await this.client.release(deviceId)));
    } catch (error) {
      this.fault(error, "releasing device");
    }
  }

  async revoke(deviceId: string, reason = "operator action"): Promise<void> {
    const key = armKey("revoke", deviceId);
    if (!isArmed(this.state, key)) {
      this.update(arm(this.state, key));
      return;
    }
    this.update(disarm(this.state));
    try {
      this.update(applyDevice(this.state, await this.client.revoke(deviceId, reason)));
    } catch (error) {
      this.fault(error, "revoking device");
    }
  }

  async acknowledge(alertId: number): Promise<void> {
    try {
      await this.client.acknowledge(alertId);
      this.update(acknowledgeAlert(this.state, alertId));
    } catch (error) {
      this.fault(error, "acknowledging alert");
    }
  }

  async addZone(name: string, range: string, role: string): Promise<void> {
    try {
      await this.client.putZone(name, range, role);
      await this.refreshZones();
    } catch (error) {
      this.fault(error, "adding zone");
    }
  }

  select(deviceId: string | null): void {
    this.update(selectDevice(this.state, deviceId));
  }

  cancelArmed(): void {
    if (this.state.armed !== null) {
      this.update(disarm(this.state));
    }
  }
}
