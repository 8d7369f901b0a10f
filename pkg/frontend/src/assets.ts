/** Asset condition board: the latest inspection verdict per physical asset. */

import { escapeHtml, fmtClock, fmtPercent } from "./format.js";
import type { Asset } from "./types.js";
import { checkAssetCondition } from "./types.js";

export interface AssetBoard {
  assets: Asset[];
}

export function buildAssetBoard(assets: Asset[]): AssetBoard {
  for (const asset of assets) checkAssetCondition(asset.condition);
  return {
    assets: [...assets].sort((a, b) => a.asset_id.localeCompare(b.asset_id)),
  };
}

export function renderAssets(board: AssetBoard): string {
  if (board.assets.length === 0) {
    return `<p class="empty">No asset updates yet.</p>`;
  }
  const rows = board.assets
    .map(
      (a) => `<tr>
      <td><code>${escapeHtml(a.asset_id)}</code></td>
      <td><span class="badge badge-${a.condition}">${a.condition}</span></td>
      <td>${fmtPercent(a.confidence)}</td>
      <td><code>${escapeHtml(a.device_id)}</code></td>
      <td>${escapeHtml(a.model_version)}</td>
      <td class="muted">${escapeHtml(fmtClock(a.last_update))}</td>
    </tr>`,
    )
    .join("\n");
  return `<table class="grid">
    <thead><tr>
      <th>Asset</th><th>Condition</th><th>Confidence</th>
      <th>Device</th><th>Model</th><th>Updated</th>
    </tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}
