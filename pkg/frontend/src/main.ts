// Browser shell: token prompt, render loop, event delegation, stream wiring.
// Everything interesting lives in controller/state/render; this file only
// touches the DOM.

import { GatewayClient } from "./api.js";
import { renderChart } from "./charts.js";
import { DashboardController } from "./controller.js";
import {
  countBadge,
  renderAlertFeed,
  renderConnection,
  renderDeviceTable,
  renderEnrollmentQueue,
  renderNotice,
  renderZones,
} from "./render.js";
import { LiveStream } from "./sse.js";

// session-memory only, never persisted
let operatorToken: string | null = null;

const $ = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
};

function showTokenPrompt(message = ""): void {
  $("token-overlay").style.display = "flex";
  $("token-message").textContent = message;
}

function hideTokenPrompt(): void {
  $("token-overlay").style.display = "none";
}

async function boot(): Promise<void> {
  const client = new GatewayClient("", () => operatorToken);
  const controller = new DashboardController(client);

  const render = () => {
    const state = controller.state;
    const now = Date.now();
    $("connection").innerHTML = renderConnection(state);
    $("notice").innerHTML = renderNotice(state);
    $("devices-panel").innerHTML = renderDeviceTable(state, now);
    $("queue-panel").innerHTML = renderEnrollmentQueue(state, now);
    $("alerts-panel").innerHTML = renderAlertFeed(state, now);
    $("zones-panel").innerHTML = renderZones(state);
    $("queue-count").innerHTML = countBadge(state.enrollments);
    $("alert-count").innerHTML = countBadge(state.alerts.filter((a) => !a.acknowledged));
  };
  controller.onChange = render;
  controller.onAuthFailure = () => showTokenPrompt("That token was rejected.");

  // token prompt
  $("token-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const input = $("token-input") as HTMLInputElement;
    if (input.value.trim().length === 0) return;
    operatorToken = input.value.trim();
    input.value = "";
    hideTokenPrompt();
    void controller.refreshAll();
  });

  // delegated clicks for all row actions
  document.body.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const button = target.closest("button[data-action]") as HTMLElement | null;
    if (!button) {
      controller.cancelArmed();
      return;
    }
    const action = button.dataset.action as string;
    const subject = button.dataset.subject as string;
    if (action === "approve") {
      const select = document.querySelector(
        `select.zone-pick[data-request="${subject}"]`,
      ) as HTMLSelectElement | null;
      void controller.approve(subject, select?.value ?? "");
    } else if (action === "deny") {
      void controller.deny(subject, "denied from dashboard");
    } else if (action === "quarantine") {
      void controller.quarantine(subject);
    } else if (action === "release") {
      void controller.release(subject);
    } else if (action === "revoke") {
      void controller.revoke(subject);
    } else if (action === "ack") {
      void controller.acknowledge(Number(subject));
    } else if (action === "chart") {
      void showChart(subject);
    }
  });

  $("zones-panel").addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    if (form.id !== "zone-form") return;
    event.preventDefault();
    const data = new FormData(form);
    void controller.addZone(
      String(data.get("name") ?? ""),
      String(data.get("range") ?? ""),
      String(data.get("role") ?? "IOT"),
    );
  });

  async function showChart(deviceId: string): Promise<void> {
    controller.select(deviceId);
    const to = Date.now() + 60_000;
    const from = to - 24 * 3_600_000;
    try {
      const series = await client.telemetryMean(deviceId, from, to);
      $("chart-panel").innerHTML =
        `<h3>device ${deviceId}</h3>` + renderChart(series);
    } catch (error) {
      $("chart-panel").innerHTML = `<div class="empty">chart unavailable: ${String(error)}</div>`;
    }
  }

  // live events
  const stream = new LiveStream("/api/v1/events", {
    onEvent: (event) => controller.handleStreamEvent(event),
    onStatus: (status) => controller.handleConnection(status),
  });
  void stream.run();

  // periodic re-sync keeps relative times fresh and covers missed events
  setInterval(() => {
    if (operatorToken !== null) void controller.refreshDevices();
  }, 30_000);
  setInterval(render, 5_000);

  render();
  showTokenPrompt();
}

void boot();
