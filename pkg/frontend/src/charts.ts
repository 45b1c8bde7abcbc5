// Minimal SVG line chart for per-device telemetry (60 s mean buckets).
// Pure string output, no chart library, no DOM.

import type { TelemetryBucket } from "./types.js";

const WIDTH = 560;
const HEIGHT = 160;
const PAD = 28;

export function renderChart(series: TelemetryBucket[], metricLabel = "temp_c mean"): string {
  if (series.length === 0) {
    return `<div class="empty">No telemetry in range.</div>`;
  }
  const xs = series.map((b) => b.start_ms);
  const ys = series.map((b) => b.value);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const xSpan = xMax - xMin || 1;
  const ySpan = yMax - yMin || 1;

  const point = (b: TelemetryBucket): string => {
    const x = PAD + ((b.start_ms - xMin) / xSpan) * (WIDTH - 2 * PAD);
    const y = HEIGHT - PAD - ((b.value - yMin) / ySpan) * (HEIGHT - 2 * PAD);
    return `${x.toFixed(1)},${y.toFixed(1)}`;
  };
  const path = series.map(point).join(" ");
  const latest = ys[ys.length - 1];

  return (
    `<svg class="chart" viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" aria-label="${metricLabel}">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="1.5" points="${path}"/>` +
    `<text x="${PAD}" y="14" class="chart-label">${metricLabel}: ` +
    `${yMin.toFixed(2)} … ${yMax.toFixed(2)} (latest ${latest.toFixed(2)})</text>` +
    `</svg>`
  );
}
