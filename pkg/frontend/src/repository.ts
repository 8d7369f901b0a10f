/** Artifact repository browser. */

import { escapeHtml, fmtBytes } from "./format.js";
import type { Artifact } from "./types.js";

export function renderRepository(artifacts: Artifact[]): string {
  if (artifacts.length === 0) {
    return `<p class="empty">No artifacts uploaded yet.</p>`;
  }
  const rows = [...artifacts]
    .sort(
      (a, b) => a.name.localeCompare(b.name) || a.version.localeCompare(b.version),
    )
    .map(
      (a) => `<tr>
      <td>${escapeHtml(a.name)}</td>
      <td>${escapeHtml(a.version)}</td>
      <td>${escapeHtml(a.precision)}</td>
      <td>${fmtBytes(a.byte_size)}</td>
      <td>${a.labels.map(escapeHtml).join(", ")}</td>
      <td><code class="muted">${escapeHtml(a.checksum.slice(0, 12))}</code></td>
    </tr>`,
    )
    .join("\n");
  return `<table class="grid">
    <thead><tr>
      <th>Name</th><th>Version</th><th>Precision</th>
      <th>Size</th><th>Labels</th><th>Checksum</th>
    </tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}
