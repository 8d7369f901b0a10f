/** Deployment cards and the merged per-fleet timeline. */

import { escapeHtml, fmtClock } from "./format.js";
import type { Deployment, DeploymentState, StateEntry } from "./types.js";
import { checkDeploymentState } from "./types.js";

export interface TimelineEvent {
  timestamp: string;
  deploymentId: string;
  deviceId: string;
  kind: string;
  version: string;
  state: DeploymentState;
  detail: string;
  seq: number;
}

export interface DeploymentView {
  deployments: Deployment[]; // newest first
  timeline: TimelineEvent[]; // oldest first
}

export function buildDeploymentView(deployments: Deployment[]): DeploymentView {
  for (const dep of deployments) {
    checkDeploymentState(dep.state);
    dep.state_history.forEach((entry) => checkDeploymentState(entry.state));
  }
  const timeline = deployments
    .flatMap((dep) =>
      dep.state_history.map(
        (entry, index): TimelineEvent & { index: number } => ({
          timestamp: entry.timestamp,
          deploymentId: dep.deployment_id,
          deviceId: dep.device_id,
          kind: dep.kind,
          version: dep.artifact.version,
          state: entry.state,
          detail: entry.detail,
          seq: dep.seq,
          index,
        }),
      ),
    )
    .sort(
      (a, b) =>
        a.timestamp.localeCompare(b.timestamp) ||
        a.seq - b.seq ||
        a.index - b.index,
    )
    .map(({ index: _index, ...event }) => event);
  return {
    deployments: [...deployments].sort((a, b) => b.seq - a.seq),
    timeline,
  };
}

function renderHistory(history: StateEntry[]): string {
  return history
    .map((entry) => {
      const detail = entry.detail
        ? ` <span class="muted">${escapeHtml(entry.detail)}</span>`
        : "";
      return `<li><span class="state state-${entry.state}">${entry.state}</span>
        <span class="muted">${escapeHtml(fmtClock(entry.timestamp))}</span>${detail}</li>`;
    })
    .join("\n");
}

export function renderDeploymentCard(dep: Deployment): string {
  return `<article class="card" data-deployment="${escapeHtml(dep.deployment_id)}">
    <header>
      <code>${escapeHtml(dep.deployment_id)}</code>
      <span class="muted">${escapeHtml(dep.kind)}</span>
      <strong>${escapeHtml(dep.artifact.name)} ${escapeHtml(dep.artifact.version)}</strong>
      <span>→ <code>${escapeHtml(dep.device_id)}</code></span>
      <span class="state state-${dep.state}">${dep.state}</span>
    </header>
    <ol class="history">${renderHistory(dep.state_history)}</ol>
  </article>`;
}

export function renderDeployments(view: DeploymentView): string {
  if (view.deployments.length === 0) {
    return `<p class="empty">No deployments yet.</p>`;
  }
  return view.deployments.map(renderDeploymentCard).join("\n");
}

export function renderTimeline(events: TimelineEvent[]): string {
  if (events.length === 0) {
    return `<p class="empty">Nothing has happened yet.</p>`;
  }
  const rows = events
    .map(
      (e) => `<li>
      <span class="muted">${escapeHtml(fmtClock(e.timestamp))}</span>
      <code>${escapeHtml(e.deviceId)}</code>
      <span class="state state-${e.state}">${e.state}</span>
      <span>${escapeHtml(e.version)}</span>
      ${e.detail ? `<span class="muted">${escapeHtml(e.detail)}</span>` : ""}
    </li>`,
    )
    .join("\n");
  return `<ol class="timeline">${rows}</ol>`;
}
