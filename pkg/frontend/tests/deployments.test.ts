import { describe, expect, it } from "vitest";
import {
  buildDeploymentView,
  renderDeployments,
  renderTimeline,
} from "../src/deployments.js";
import type { Deployment, StateEntry } from "../src/types.js";
import { VocabularyError } from "../src/types.js";

let counter = 0;

function entry(state: StateEntry["state"], timestamp: string, detail = ""): StateEntry {
  return { state, timestamp, detail };
}

function deployment(overrides: Partial<Deployment> = {}): Deployment {
  counter += 1;
  return {
    deployment_id: `dep-00000${counter}`,
    device_id: "edge-2",
    kind: "install",
    seq: counter,
    state: "ACTIVE",
    created_at: "2026-08-16T10:00:00Z",
    artifact: { name: "toy-classifier", version: "1.0.0" },
    state_history: [
      entry("PENDING", "2026-08-16T10:00:00Z"),
      entry("DELIVERED", "2026-08-16T10:00:01Z", "delivered to device"),
      entry("INSTALLING", "2026-08-16T10:00:02Z"),
      entry("ACTIVE", "2026-08-16T10:00:03Z"),
    ],
    supersedes: null,
    ...overrides,
  };
}

describe("buildDeploymentView", () => {
  it("orders cards newest-first and the timeline oldest-first", () => {
    const older = deployment();
    const newer = deployment({
      artifact: { name: "toy-classifier", version: "1.1.0" },
      state_history: [
        entry("PENDING", "2026-08-16T10:05:00Z"),
        entry("ACTIVE", "2026-08-16T10:05:03Z"),
      ],
    });
    const view = buildDeploymentView([older, newer]);
    expect(view.deployments[0].deployment_id).toBe(newer.deployment_id);
    expect(view.timeline[0].timestamp).toBe("2026-08-16T10:00:00Z");
    expect(view.timeline.at(-1)?.timestamp).toBe("2026-08-16T10:05:03Z");
  });

  it("interleaves histories so a rollback reads ROLLED_BACK then ACTIVE", () => {
    const superseded = deployment({
      state: "ROLLED_BACK",
      artifact: { name: "toy-classifier", version: "1.1.0" },
      state_history: [
        entry("PENDING", "2026-08-16T10:00:00Z"),
        entry("ACTIVE", "2026-08-16T10:00:03Z"),
        entry("ROLLED_BACK", "2026-08-16T10:07:01Z", "superseded"),
      ],
    });
    const rollback = deployment({
      kind: "rollback",
      supersedes: superseded.deployment_id,
      state_history: [
        entry("PENDING", "2026-08-16T10:07:00Z"),
        entry("DELIVERED", "2026-08-16T10:07:02Z"),
        entry("INSTALLING", "2026-08-16T10:07:03Z"),
        entry("ACTIVE", "2026-08-16T10:07:04Z"),
      ],
    });
    const view = buildDeploymentView([superseded, rollback]);
    const states = view.timeline.map((e) => e.state);
    const rolledBackAt = states.indexOf("ROLLED_BACK");
    const finalActiveAt = view.timeline.findIndex(
      (e) => e.deploymentId === rollback.deployment_id && e.state === "ACTIVE",
    );
    expect(rolledBackAt).toBeGreaterThanOrEqual(0);
    expect(finalActiveAt).toBeGreaterThan(rolledBackAt);
  });

  it("breaks timestamp ties by deployment seq", () => {
    const first = deployment({
      seq: 1,
      state_history: [entry("PENDING", "2026-08-16T10:00:00Z")],
      state: "PENDING",
    });
    const second = deployment({
      seq: 2,
      state_history: [entry("PENDING", "2026-08-16T10:00:00Z")],
      state: "PENDING",
    });
    const view = buildDeploymentView([second, first]);
    expect(view.timeline.map((e) => e.seq)).toEqual([1, 2]);
  });

  it("rejects a state outside the machine's vocabulary", () => {
    const bogusTop = deployment({ state: "PAUSED" as Deployment["state"] });
    expect(() => buildDeploymentView([bogusTop])).toThrow(VocabularyError);

    const bogusHistory = deployment({
      state_history: [entry("PAUSED" as StateEntry["state"], "2026-08-16T10:00:00Z")],
    });
    expect(() => buildDeploymentView([bogusHistory])).toThrow(VocabularyError);
  });
});

describe("rendering", () => {
  it("shows a FAILED deployment with the server's detail", () => {
    const failed = deployment({
      state: "FAILED",
      state_history: [
        entry("PENDING", "2026-08-16T10:00:00Z"),
        entry("DELIVERED", "2026-08-16T10:00:01Z"),
        entry("INSTALLING", "2026-08-16T10:00:02Z"),
        entry("FAILED", "2026-08-16T10:00:03Z", "bundle verification failed"),
      ],
    });
    const html = renderDeployments(buildDeploymentView([failed]));
    expect(html).toContain("state-FAILED");
    expect(html).toContain("bundle verification failed");
  });

  it("renders empty states for both panels", () => {
    const view = buildDeploymentView([]);
    expect(renderDeployments(view)).toContain("No deployments yet");
    expect(renderTimeline(view.timeline)).toContain("Nothing has happened yet");
  });

  it("timeline rows carry device, state, and version", () => {
    const view = buildDeploymentView([deployment()]);
    const html = renderTimeline(view.timeline);
    expect(html).toContain("edge-2");
    expect(html).toContain("state-ACTIVE");
    expect(html).toContain("1.0.0");
  });
});
