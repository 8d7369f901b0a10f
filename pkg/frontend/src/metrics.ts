/** Latency-over-time chart, one series per model version, plus the
 * aggregate table. Both are derived from the same metrics response.
 */

import { escapeHtml, fmtClock, fmtMs } from "./format.js";
import type { MetricSample, MetricsSummary } from "./types.js";

export interface SeriesPoint {
  t: number; // epoch ms
  latencyMs: number;
  deviceId: string;
  timestamp: string;
}

export interface MetricsSeries {
  version: string;
  color: string;
  points: SeriesPoint[];
}

const PALETTE = [
  "#2563eb",
  "#dc2626",
  "#16a34a",
  "#d97706",
  "#7c3aed",
  "#0891b2",
];

export function buildMetricsSeries(samples: MetricSample[]): MetricsSeries[] {
  const byVersion = new Map<string, SeriesPoint[]>();
  for (const sample of samples) {
    const point: SeriesPoint = {
      t: Date.parse(sample.timestamp),
      latencyMs: sample.latency_ms,
      deviceId: sample.device_id,
      timestamp: sample.timestamp,
    };
    const bucket = byVersion.get(sample.artifact_version);
    if (bucket) bucket.push(point);
    else byVersion.set(sample.artifact_version, [point]);
  }
  return [...byVersion.keys()].sort().map((version, i) => ({
    version,
    color: PALETTE[i % PALETTE.length],
    points: byVersion.get(version)!.sort((a, b) => a.t - b.t),
  }));
}

const WIDTH = 720;
const HEIGHT = 260;
const PAD = { left: 56, right: 16, top: 16, bottom: 32 };

function scale(value: number, lo: number, hi: number, a: number, b: number): number {
  if (hi === lo) return (a + b) / 2;
  return a + ((value - lo) / (hi - lo)) * (b - a);
}

export function renderMetricsChart(series: MetricsSeries[]): string {
  const axes = `<line class="axis" x1="${PAD.left}" y1="${HEIGHT - PAD.bottom}"
      x2="${WIDTH - PAD.right}" y2="${HEIGHT - PAD.bottom}"></line>
    <line class="axis" x1="${PAD.left}" y1="${PAD.top}"
      x2="${PAD.left}" y2="${HEIGHT - PAD.bottom}"></line>`;
  const points = series.flatMap((s) => s.points);
  if (points.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img">
      ${axes}
      <text class="placeholder" x="${WIDTH / 2}" y="${HEIGHT / 2}"
        text-anchor="middle">No measurements yet.</text>
    </svg>`;
  }

  const ts = points.map((p) => p.t);
  const ys = points.map((p) => p.latencyMs);
  const tLo = Math.min(...ts);
  const tHi = Math.max(...ts);
  const yHi = Math.max(...ys);
  const x = (t: number) => scale(t, tLo, tHi, PAD.left + 8, WIDTH - PAD.right - 8);
  // y axis always starts at zero so versions stay visually comparable
  const y = (v: number) => scale(v, 0, yHi, HEIGHT - PAD.bottom - 8, PAD.top + 8);

  const body = series
    .map((s) => {
      const dots = s.points
        .map(
          (p) => `<circle cx="${x(p.t).toFixed(1)}" cy="${y(p.latencyMs).toFixed(1)}" r="3.5"
            fill="${s.color}"><title>${escapeHtml(s.version)} ${escapeHtml(p.deviceId)}
            ${fmtMs(p.latencyMs)} at ${escapeHtml(fmtClock(p.timestamp))}</title></circle>`,
        )
        .join("");
      const path =
        s.points.length > 1
          ? `<polyline fill="none" stroke="${s.color}" stroke-width="1.5" points="${s.points
              .map((p) => `${x(p.t).toFixed(1)},${y(p.latencyMs).toFixed(1)}`)
              .join(" ")}"></polyline>`
          : "";
      return `<g data-series="${escapeHtml(s.version)}">${path}${dots}</g>`;
    })
    .join("\n");

  const yLabel = `<text class="tick" x="${PAD.left - 8}" y="${PAD.top + 12}"
      text-anchor="end">${fmtMs(yHi)}</text>
    <text class="tick" x="${PAD.left - 8}" y="${HEIGHT - PAD.bottom}"
      text-anchor="end">0</text>`;

  return `<svg class="chart" viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img">
    ${axes}${yLabel}
    ${body}
  </svg>`;
}

export function renderLegend(series: MetricsSeries[]): string {
  if (series.length === 0) return "";
  const items = series
    .map(
      (s) => `<li class="legend-item" data-legend="${escapeHtml(s.version)}">
      <span class="swatch" style="background:${s.color}"></span>
      ${escapeHtml(s.version)}
      <span class="muted">(${s.points.length})</span>
    </li>`,
    )
    .join("\n");
  return `<ul class="legend">${items}</ul>`;
}

export function renderAggregates(summary: MetricsSummary): string {
  const rows = Object.entries(summary.by_version)
    .map(
      ([version, agg]) => `<tr>
      <td>${escapeHtml(version)}</td>
      <td>${agg.count}</td>
      <td>${fmtMs(agg.mean_latency_ms)}</td>
      <td>${fmtMs(agg.p95_latency_ms)}</td>
    </tr>`,
    )
    .join("\n");
  return `<table class="grid">
    <thead><tr><th>Version</th><th>Count</th><th>Mean</th><th>p95</th></tr></thead>
    <tbody>
      ${rows}
      <tr class="total"><td>all</td><td>${summary.count}</td>
        <td>${fmtMs(summary.mean_latency_ms)}</td>
        <td>${fmtMs(summary.p95_latency_ms)}</td></tr>
    </tbody>
  </table>`;
}
