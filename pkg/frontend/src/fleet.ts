/** Fleet overview: one row per device with health, versions, and latency. */

import { escapeHtml, fmtClock, fmtMs } from "./format.js";
import type { Device, DeviceStatus, MetricSample } from "./types.js";
import { checkDeviceStatus } from "./types.js";

export interface FleetRow {
  deviceId: string;
  status: DeviceStatus;
  hardwareProfile: string;
  activeVersion: string | null;
  previousVersion: string | null;
  lastHeartbeat: string;
  meanLatencyMs: number | null;
  sampleCount: number;
  canRollback: boolean;
}

export interface FleetView {
  rows: FleetRow[];
}

/** Render model from one devices response plus the shared metric samples.
 *
 * Latency cells and the metrics chart are computed from the same samples
 * payload, so the two screens can never disagree.
 */
export function buildFleetView(devices: Device[], samples: MetricSample[]): FleetView {
  const rows = devices
    .map((device): FleetRow => {
      const mine = samples.filter((s) => s.device_id === device.device_id);
      const mean =
        mine.length > 0
          ? mine.reduce((acc, s) => acc + s.latency_ms, 0) / mine.length
          : null;
      return {
        deviceId: device.device_id,
        status: checkDeviceStatus(device.status),
        hardwareProfile: device.hardware_profile,
        activeVersion: device.active_artifact?.version ?? null,
        previousVersion: device.previous_artifact?.version ?? null,
        lastHeartbeat: device.last_heartbeat,
        meanLatencyMs: mean,
        sampleCount: mine.length,
        canRollback: device.previous_artifact !== null,
      };
    })
    .sort((a, b) => a.deviceId.localeCompare(b.deviceId));
  return { rows };
}

export function renderFleet(view: FleetView): string {
  if (view.rows.length === 0) {
    return `<p class="empty">No devices registered yet.</p>`;
  }
  const rows = view.rows
    .map((row) => {
      const rollback = row.canRollback
        ? `<button data-action="rollback" data-device="${escapeHtml(row.deviceId)}">Roll back</button>`
        : `<button disabled title="no previous version">Roll back</button>`;
      return `<tr data-device-row="${escapeHtml(row.deviceId)}">
        <td><code>${escapeHtml(row.deviceId)}</code></td>
        <td><span class="badge badge-${row.status}">${row.status}</span></td>
        <td class="cell-active">${escapeHtml(row.activeVersion ?? "–")}</td>
        <td>${escapeHtml(row.previousVersion ?? "–")}</td>
        <td>${fmtMs(row.meanLatencyMs)}${row.sampleCount > 0 ? ` <span class="muted">(${row.sampleCount})</span>` : ""}</td>
        <td class="muted">${escapeHtml(fmtClock(row.lastHeartbeat))}</td>
        <td>${rollback}</td>
      </tr>`;
    })
    .join("\n");
  return `<table class="grid">
    <thead><tr>
      <th>Device</th><th>Status</th><th>Active</th><th>Previous</th>
      <th>Mean latency</th><th>Heartbeat</th><th></th>
    </tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}
