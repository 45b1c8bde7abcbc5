// End-to-end flows against a live gateway (spawned as a subprocess with a
// real UDP device): the dashboard controller + stream client are exercised
// exactly as the browser shell drives them.

import { type ChildProcess, spawn } from "node:child_process";
import { createInterface } from "node:readline";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GatewayClient } from "../src/api";
import { DashboardController } from "../src/controller";
import { LiveStream } from "../src/sse";
import type { Alert } from "../src/types";

const E2E_DIR = new URL(".", import.meta.url).pathname;

interface HarnessInfo {
  http_port: number;
  udp_port: number;
  token: string;
}

let harness: ChildProcess;
let info: HarnessInfo;
let base: string;
let controller: DashboardController;
let stream: LiveStream;
const alertArrivals = new Map<number, number>(); // alert_id -> Date.now() at arrival

function firstJsonLine(child: ChildProcess): Promise<Record<string, unknown>> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("subprocess never spoke")), 20_000);
    const lines = createInterface({ input: child.stdout! });
    lines.once("line", (line) => {
      clearTimeout(timer);
      resolve(JSON.parse(line));
    });
    child.once("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`subprocess exited early (${code})`));
    });
  });
}

async function waitFor(test: () => boolean, what: string, timeoutMs = 15_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (test()) return;
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
  throw new Error(`timed out waiting for ${what}`);
}

function startDevice(name: string, extra: string[] = []): ChildProcess {
  return spawn(
    "python3",
    [`${E2E_DIR}device.py`, "--udp-port", String(info.udp_port), "--name", name, ...extra],
    { stdio: ["ignore", "pipe", "inherit"] },
  );
}

beforeAll(async () => {
  harness = spawn("python3", [`${E2E_DIR}gateway_harness.py`], {
    stdio: ["pipe", "pipe", "inherit"],
  });
  info = (await firstJsonLine(harness)) as unknown as HarnessInfo;
  base = `http://127.0.0.1:${info.http_port}`;

  const client = new GatewayClient(base, () => info.token);
  controller = new DashboardController(client);
  stream = new LiveStream(`${base}/api/v1/events`, {
    onEvent: (event) => {
      if (event.event === "alert") {
        alertArrivals.set((event.data as Alert).alert_id, Date.now());
      }
      controller.handleStreamEvent(event);
    },
    onStatus: (status) => controller.handleConnection(status),
  });
  void stream.run();
  await waitFor(() => controller.state.connection === "live", "stream connect");
  await controller.refreshAll();
}, 30_000);

afterAll(() => {
  stream?.stop();
  harness?.stdin?.end();
  harness?.kill();
});

describe("dashboard against a live gateway", () => {
  it("approves an enrollment from the queue and the device turns ACTIVE", async () => {
    const device = startDevice("kitchen-lamp", ["--send", "2"]);
    // the enrollment event arrives over SSE and joins the queue
    await waitFor(() => controller.state.enrollments.length === 1, "queue row");
    const request = controller.state.enrollments[0];
    expect(request.requested_name).toBe("kitchen-lamp");

    await controller.approve(request.request_id, "sensors");
    expect(controller.state.enrollments.length).toBe(0); // row removed
    await waitFor(
      () => controller.state.devices.some((d) => d.name === "kitchen-lamp" && d.status === "ACTIVE"),
      "device row ACTIVE",
    );
    const identity = (await firstJsonLine(device)) as { device_id: string };
    expect(controller.state.devices.some((d) => d.device_id === identity.device_id)).toBe(true);
  }, 30_000);

  it("flood raises a CRIT alert over SSE within 2 s and quarantines the device", async () => {
    const device = startDevice("flooder", ["--flood", "8"]);
    await waitFor(() => controller.state.enrollments.length === 1, "flooder enrollment");
    await controller.approve(controller.state.enrollments[0].request_id, "sensors");
    const identity = (await firstJsonLine(device)) as { device_id: string };

    await waitFor(
      () => controller.state.alerts.some((a) => a.rule === "R4_FLOOD" && a.severity === "CRIT"),
      "flood alert",
      20_000,
    );
    const alert = controller.state.alerts.find((a) => a.rule === "R4_FLOOD")!;
    const arrived = alertArrivals.get(alert.alert_id)!;
    expect(arrived - alert.at).toBeLessThan(2_000); // emission -> feed latency

    await waitFor(
      () =>
        controller.state.devices.some(
          (d) => d.device_id === identity.device_id && d.status === "QUARANTINED",
        ),
      "auto-quarantine reflected",
    );
  }, 40_000);

  it("quarantine and release from the UI both reflect in the table", async () => {
    const target = controller.state.devices.find(
      (d) => d.name === "kitchen-lamp" && d.status === "ACTIVE",
    )!;
    expect(target).toBeDefined();

    await controller.quarantine(target.device_id); // arms
    await controller.quarantine(target.device_id); // confirms
    expect(
      controller.state.devices.find((d) => d.device_id === target.device_id)?.status,
    ).toBe("QUARANTINED");

    await controller.release(target.device_id);
    expect(
      controller.state.devices.find((d) => d.device_id === target.device_id)?.status,
    ).toBe("ACTIVE");
  }, 30_000);

  it("hard refresh reproduces the same view from API data alone", async () => {
    const client = new GatewayClient(base, () => info.token);
    const fresh = new DashboardController(client);
    await fresh.refreshAll();
    const ids = (list: { device_id: string; status: string }[]) =>
      [...list].map((d) => `${d.device_id}:${d.status}`).sort();
    expect(ids(fresh.state.devices)).toEqual(ids(controller.state.devices));
  }, 30_000);
});
