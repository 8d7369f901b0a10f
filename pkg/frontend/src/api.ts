/** Typed client for the registry HTTP/JSON API.
 *
 * Every console mutation goes through here, and the only mutations are
 * the deploy and rollback POSTs.
 */

import type {
  Artifact,
  Asset,
  Deployment,
  Device,
  MetricsSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface MetricsQuery {
  device?: string;
  version?: string;
  samples?: boolean;
}

export class RegistryApi {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl = "",
    fetchFn?: FetchLike,
  ) {
    // default must stay a closure: a bare `fetch` reference loses its
    // required `this` binding in browsers
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      let message = text;
      try {
        const doc = JSON.parse(text) as { error?: string };
        if (typeof doc.error === "string") message = doc.error;
      } catch {
        // non-JSON error body: show it verbatim
      }
      throw new ApiError(resp.status, message);
    }
    return JSON.parse(text) as T;
  }

  async listDevices(): Promise<Device[]> {
    const doc = await this.request<{ devices: Device[] }>("GET", "/api/devices");
    return doc.devices;
  }

  async listArtifacts(): Promise<Artifact[]> {
    const doc = await this.request<{ artifacts: Artifact[] }>("GET", "/api/artifacts");
    return doc.artifacts;
  }

  async listDeployments(deviceId?: string): Promise<Deployment[]> {
    const suffix = deviceId ? `?device=${encodeURIComponent(deviceId)}` : "";
    const doc = await this.request<{ deployments: Deployment[] }>(
      "GET",
      `/api/deployments${suffix}`,
    );
    return doc.deployments;
  }

  getDeployment(deploymentId: string): Promise<Deployment> {
    return this.request("GET", `/api/deployments/${encodeURIComponent(deploymentId)}`);
  }

  createDeployment(deviceId: string, name: string, version: string): Promise<Deployment> {
    return this.request("POST", "/api/deployments", {
      device_id: deviceId,
      name,
      version,
    });
  }

  rollbackDevice(deviceId: string): Promise<Deployment> {
    return this.request(
      "POST",
      `/api/devices/${encodeURIComponent(deviceId)}/rollback`,
      {},
    );
  }

  metrics(query: MetricsQuery = {}): Promise<MetricsSummary> {
    const params = new URLSearchParams();
    if (query.device) params.set("device", query.device);
    if (query.version) params.set("version", query.version);
    if (query.samples) params.set("samples", "1");
    const suffix = params.size > 0 ? `?${params.toString()}` : "";
    return this.request("GET", `/api/metrics${suffix}`);
  }

  async listAssets(): Promise<Asset[]> {
    const doc = await this.request<{ assets: Asset[] }>("GET", "/api/assets");
    return doc.assets;
  }
}
