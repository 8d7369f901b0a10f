import { describe, expect, it } from "vitest";
import { buildAssetBoard, renderAssets } from "../src/assets.js";
import type { Asset } from "../src/types.js";
import { VocabularyError } from "../src/types.js";

function asset(overrides: Partial<Asset> = {}): Asset {
  return {
    asset_id: "pump-7",
    asset_type: "asset",
    condition: "OK",
    confidence: 0.9968,
    device_id: "edge-2",
    last_update: "2026-08-16T10:00:00Z",
    model_version: "1.0.0",
    ...overrides,
  };
}

describe("buildAssetBoard", () => {
  it("sorts assets by id", () => {
    const board = buildAssetBoard([
      asset({ asset_id: "press-3" }),
      asset({ asset_id: "conveyor-1" }),
    ]);
    expect(board.assets.map((a) => a.asset_id)).toEqual(["conveyor-1", "press-3"]);
  });

  it("rejects conditions outside the vocabulary", () => {
    const bogus = asset({ condition: "MELTED" as Asset["condition"] });
    expect(() => buildAssetBoard([bogus])).toThrow(VocabularyError);
  });

  it("accepts the UNKNOWN condition", () => {
    const board = buildAssetBoard([asset({ condition: "UNKNOWN" })]);
    expect(board.assets[0].condition).toBe("UNKNOWN");
  });
});

describe("renderAssets", () => {
  it("shows an empty state before any updates arrive", () => {
    expect(renderAssets(buildAssetBoard([]))).toContain("No asset updates yet");
  });

  it("renders condition badges, confidence, and provenance", () => {
    const html = renderAssets(
      buildAssetBoard([
        asset(),
        asset({ asset_id: "saw-1", condition: "CRITICAL", confidence: 0.61 }),
      ]),
    );
    expect(html).toContain(`class="badge badge-OK"`);
    expect(html).toContain(`class="badge badge-CRITICAL"`);
    expect(html).toContain("99.7%");
    expect(html).toContain("61.0%");
    expect(html).toContain("pump-7");
    expect(html).toContain("edge-2");
    expect(html).toContain("1.0.0");
  });
});
