// @vitest-environment jsdom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ApiError, RegistryApi } from "../src/api.js";
import { App } from "../src/app.js";
import type { Deployment, Device, MetricsSummary } from "../src/types.js";

function device(id: string, previous: string | null): Device {
  return {
    device_id: id,
    hardware_profile: "simulated",
    registered_at: "2026-08-16T10:00:00Z",
    last_heartbeat: "2026-08-16T10:00:05Z",
    status: "online",
    active_artifact: { name: "toy-classifier", version: "1.1.0" },
    previous_artifact: previous
      ? { name: "toy-classifier", version: previous }
      : null,
  };
}

function pendingDeployment(id: string): Deployment {
  return {
    deployment_id: id,
    device_id: "edge-2",
    kind: "rollback",
    seq: 9,
    state: "PENDING",
    created_at: "2026-08-16T10:01:00Z",
    artifact: { name: "toy-classifier", version: "1.0.0" },
    state_history: [
      { state: "PENDING", timestamp: "2026-08-16T10:01:00Z", detail: "" },
    ],
    supersedes: "dep-000002",
  };
}

const EMPTY_METRICS: MetricsSummary = {
  count: 0,
  mean_latency_ms: null,
  p95_latency_ms: null,
  by_version: {},
  samples: [],
};

/** In-memory stand-in for RegistryApi with scriptable failures. */
class FakeApi {
  devices: Device[] = [device("edge-1", null), device("edge-2", "1.0.0")];
  artifacts = [
    {
      name: "toy-classifier",
      version: "1.0.0",
      precision: "fp32",
      checksum: "a".repeat(64),
      byte_size: 400_000,
      labels: ["intact", "worn", "cracked"],
      created_at: "2000-01-01T00:00:00Z",
    },
  ];
  deployments: Deployment[] = [];
  failPolls = false;
  rollbackError: ApiError | null = null;
  deployError: ApiError | null = null;
  rollbackCalls: string[] = [];
  deployCalls: Array<{ device: string; name: string; version: string }> = [];

  private guard<T>(value: T): Promise<T> {
    if (this.failPolls) return Promise.reject(new TypeError("fetch failed"));
    return Promise.resolve(value);
  }

  listDevices() {
    return this.guard(this.devices);
  }
  listArtifacts() {
    return this.guard(this.artifacts);
  }
  listDeployments() {
    return this.guard(this.deployments);
  }
  metrics() {
    return this.guard(EMPTY_METRICS);
  }
  listAssets() {
    return this.guard([]);
  }
  getDeployment(id: string) {
    const found = this.deployments.find((d) => d.deployment_id === id);
    return found
      ? Promise.resolve(found)
      : Promise.reject(new ApiError(404, `no deployment ${id}`));
  }
  rollbackDevice(deviceId: string) {
    this.rollbackCalls.push(deviceId);
    if (this.rollbackError) return Promise.reject(this.rollbackError);
    const dep = pendingDeployment("dep-roll-1");
    this.deployments = [...this.deployments, dep];
    return Promise.resolve(dep);
  }
  createDeployment(deviceId: string, name: string, version: string) {
    this.deployCalls.push({ device: deviceId, name, version });
    if (this.deployError) return Promise.reject(this.deployError);
    const dep = { ...pendingDeployment("dep-new-1"), kind: "install" as const };
    this.deployments = [...this.deployments, dep];
    return Promise.resolve(dep);
  }
}

let root: HTMLElement;
let api: FakeApi;
let app: App;
let confirmAnswer: boolean;

function clickAction(selector: string): void {
  const el = root.querySelector<HTMLElement>(selector);
  expect(el, `expected element ${selector}`).toBeTruthy();
  el!.click();
}

const settle = () => new Promise<void>((resolve) => setTimeout(resolve, 0));

beforeEach(async () => {
  window.location.hash = "";
  root = document.createElement("div");
  document.body.appendChild(root);
  api = new FakeApi();
  confirmAnswer = true;
  app = new App(root, api as unknown as RegistryApi, {
    pollMs: 60_000,
    confirm: () => confirmAnswer,
  });
  app.start();
  await settle();
});

afterEach(() => {
  app.stop();
  root.remove();
  vi.restoreAllMocks();
});

describe("fleet page", () => {
  it("renders the fleet after the first poll", () => {
    expect(root.innerHTML).toContain("edge-1");
    expect(root.innerHTML).toContain("edge-2");
    expect(root.innerHTML).toContain("badge-online");
  });

  it("shows a banner when the registry is unreachable and clears it on recovery", async () => {
    api.failPolls = true;
    await app.refresh();
    expect(root.innerHTML).toContain("Registry unreachable");

    api.failPolls = false;
    await app.refresh();
    expect(root.innerHTML).not.toContain("Registry unreachable");
    expect(root.innerHTML).toContain("edge-1");
  });
});

describe("rollback action", () => {
  it("does nothing when the operator declines the confirmation", async () => {
    confirmAnswer = false;
    clickAction(`button[data-action="rollback"][data-device="edge-2"]`);
    await settle();
    expect(api.rollbackCalls).toEqual([]);
  });

  it("posts the rollback and watches the new deployment", async () => {
    clickAction(`button[data-action="rollback"][data-device="edge-2"]`);
    await settle();
    await settle();
    expect(api.rollbackCalls).toEqual(["edge-2"]);
    expect(root.innerHTML).toContain("Rollback dep-roll-1 created");
    expect(root.innerHTML).toContain("Watching");
    expect(root.innerHTML).toContain("dep-roll-1");
  });

  it("surfaces a precondition failure as a toast without crashing", async () => {
    api.rollbackError = new ApiError(409, "device edge-2 has no previous version");
    clickAction(`button[data-action="rollback"][data-device="edge-2"]`);
    await settle();
    expect(root.innerHTML).toContain("Rollback failed");
    expect(root.innerHTML).toContain("no previous version");
    // still functional afterwards
    await app.refresh();
    expect(root.innerHTML).toContain("edge-1");
  });

  it("toast can be dismissed", async () => {
    clickAction(`button[data-action="rollback"][data-device="edge-2"]`);
    await settle();
    await settle();
    clickAction(`button[data-action="dismiss-toast"]`);
    expect(root.innerHTML).not.toContain("Rollback dep-roll-1 created");
  });
});

describe("deploy action", () => {
  function pickForm(): void {
    const deviceSelect = root.querySelector<HTMLSelectElement>(
      `select[data-field="device"]`,
    )!;
    deviceSelect.value = "edge-2";
    deviceSelect.dispatchEvent(new Event("change", { bubbles: true }));
    const artifactSelect = root.querySelector<HTMLSelectElement>(
      `select[data-field="artifact"]`,
    )!;
    artifactSelect.value = JSON.stringify({
      name: "toy-classifier",
      version: "1.0.0",
    });
    artifactSelect.dispatchEvent(new Event("change", { bubbles: true }));
  }

  it("asks for a full selection before posting", async () => {
    clickAction(`button[data-action="deploy"]`);
    await settle();
    expect(api.deployCalls).toEqual([]);
    expect(root.innerHTML).toContain("Pick a device and an artifact version");
  });

  it("keeps the selection across re-renders and posts it", async () => {
    pickForm();
    await app.refresh(); // re-render must not lose the picked values
    clickAction(`button[data-action="deploy"]`);
    await settle();
    expect(api.deployCalls).toEqual([
      { device: "edge-2", name: "toy-classifier", version: "1.0.0" },
    ]);
    expect(root.innerHTML).toContain("Deployment dep-new-1 created");
  });

  it("renders an in-flight conflict inline next to the form", async () => {
    api.deployError = new ApiError(
      409,
      "deployment dep-000007 is already in flight (PENDING)",
    );
    pickForm();
    clickAction(`button[data-action="deploy"]`);
    await settle();
    const error = root.querySelector(".form-error");
    expect(error?.textContent).toContain("already in flight");
  });
});

describe("routing", () => {
  it("renders the view named by the location hash", async () => {
    window.location.hash = "#/repository";
    app.render();
    expect(root.innerHTML).toContain("toy-classifier");
    expect(root.innerHTML).toContain("fp32");

    window.location.hash = "#/metrics";
    app.render();
    expect(root.innerHTML).toContain("No measurements yet");

    window.location.hash = "#/assets";
    app.render();
    expect(root.innerHTML).toContain("No asset updates yet");

    window.location.hash = "#/nonsense";
    app.render();
    expect(root.innerHTML).toContain("Fleet");
  });
});
