/** Console shell: hash routing, one polling loop, deploy/rollback actions.
 *
 * All state shown on screen is rebuilt from the latest API snapshot on
 * every render; nothing the server does not know survives a refresh.
 */

import { ApiError, RegistryApi } from "./api.js";
import { buildAssetBoard, renderAssets } from "./assets.js";
import {
  buildDeploymentView,
  renderDeploymentCard,
  renderDeployments,
  renderTimeline,
} from "./deployments.js";
import { buildFleetView, renderFleet } from "./fleet.js";
import { escapeHtml } from "./format.js";
import {
  buildMetricsSeries,
  renderAggregates,
  renderLegend,
  renderMetricsChart,
} from "./metrics.js";
import { Poller } from "./poll.js";
import { renderRepository } from "./repository.js";
import type {
  Artifact,
  ArtifactRef,
  Asset,
  Deployment,
  Device,
  MetricsSummary,
} from "./types.js";

const ROUTES = ["fleet", "repository", "deployments", "metrics", "assets"] as const;
type Route = (typeof ROUTES)[number];

const ROUTE_TITLES: Record<Route, string> = {
  fleet: "Fleet",
  repository: "Repository",
  deployments: "Deployments",
  metrics: "Metrics",
  assets: "Assets",
};

interface Snapshot {
  devices: Device[];
  artifacts: Artifact[];
  deployments: Deployment[];
  metrics: MetricsSummary;
  assets: Asset[];
  watched: Deployment | null;
}

export interface AppOptions {
  pollMs?: number;
  confirm?: (message: string) => boolean;
}

function messageOf(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export class App {
  private readonly confirmFn: (message: string) => boolean;
  private readonly poller: Poller<Snapshot>;
  private snapshot: Snapshot | null = null;
  private banner: string | null = null;
  private toast: string | null = null;
  private deployError: string | null = null;
  private watchId: string | null = null;
  private form: { device: string; artifact: ArtifactRef | null } = {
    device: "",
    artifact: null,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: RegistryApi,
    opts: AppOptions = {},
  ) {
    this.confirmFn = opts.confirm ?? ((message) => window.confirm(message));
    this.poller = new Poller(
      () => this.fetchAll(),
      (snap) => this.apply(snap),
      (err) => this.onPollError(err),
      opts.pollMs ?? 3000,
    );
  }

  start(): void {
    this.root.addEventListener("click", this.onClick);
    this.root.addEventListener("change", this.onChange);
    window.addEventListener("hashchange", this.onHashChange);
    this.render();
    this.poller.start();
  }

  stop(): void {
    this.poller.stop();
    this.root.removeEventListener("click", this.onClick);
    this.root.removeEventListener("change", this.onChange);
    window.removeEventListener("hashchange", this.onHashChange);
  }

  /** One immediate poll; what the interval timer runs between ticks. */
  refresh(): Promise<void> {
    return this.poller.tick();
  }

  private async fetchAll(): Promise<Snapshot> {
    const watchId = this.watchId;
    const [devices, artifacts, deployments, metrics, assets, watched] =
      await Promise.all([
        this.api.listDevices(),
        this.api.listArtifacts(),
        this.api.listDeployments(),
        this.api.metrics({ samples: true }),
        this.api.listAssets(),
        watchId ? this.api.getDeployment(watchId) : Promise.resolve(null),
      ]);
    return { devices, artifacts, deployments, metrics, assets, watched };
  }

  private apply(snap: Snapshot): void {
    this.snapshot = snap;
    this.banner = null;
    this.render();
  }

  private onPollError(err: unknown): void {
    this.banner =
      err instanceof ApiError
        ? `Registry error: ${err.message}`
        : "Registry unreachable, retrying…";
    this.render();
  }

  private readonly onHashChange = (): void => this.render();

  private readonly onClick = (event: Event): void => {
    const target = (event.target as Element | null)?.closest?.("[data-action]");
    if (!(target instanceof HTMLElement)) return;
    const action = target.dataset.action;
    if (action === "rollback" && target.dataset.device) {
      void this.doRollback(target.dataset.device);
    } else if (action === "deploy") {
      void this.doDeploy();
    } else if (action === "dismiss-toast") {
      this.toast = null;
      this.render();
    }
  };

  private readonly onChange = (event: Event): void => {
    const target = event.target;
    if (!(target instanceof HTMLSelectElement)) return;
    if (target.dataset.field === "device") {
      this.form.device = target.value;
    } else if (target.dataset.field === "artifact") {
      this.form.artifact = target.value
        ? (JSON.parse(target.value) as ArtifactRef)
        : null;
    }
  };

  private async doRollback(deviceId: string): Promise<void> {
    if (!this.confirmFn(`Roll ${deviceId} back to its previous version?`)) {
      return;
    }
    try {
      const dep = await this.api.rollbackDevice(deviceId);
      this.watchId = dep.deployment_id;
      this.toast = `Rollback ${dep.deployment_id} created for ${deviceId}.`;
    } catch (err) {
      this.toast = `Rollback failed: ${messageOf(err)}`;
    }
    this.render();
    void this.refresh();
  }

  private async doDeploy(): Promise<void> {
    const { device, artifact } = this.form;
    if (!device || !artifact) {
      this.deployError = "Pick a device and an artifact version first.";
      this.render();
      return;
    }
    try {
      const dep = await this.api.createDeployment(device, artifact.name, artifact.version);
      this.watchId = dep.deployment_id;
      this.deployError = null;
      this.toast = `Deployment ${dep.deployment_id} created.`;
    } catch (err) {
      // conflicts (one in-flight deployment per device) land here inline
      this.deployError = messageOf(err);
    }
    this.render();
    void this.refresh();
  }

  private route(): Route {
    const hash = window.location.hash.replace(/^#\//, "");
    return (ROUTES as readonly string[]).includes(hash) ? (hash as Route) : "fleet";
  }

  render(): void {
    const route = this.route();
    const nav = ROUTES.map(
      (r) =>
        `<a href="#/${r}" class="${r === route ? "current" : ""}">${ROUTE_TITLES[r]}</a>`,
    ).join("");
    const banner = this.banner
      ? `<div class="banner" role="alert">${escapeHtml(this.banner)}</div>`
      : "";
    const toast = this.toast
      ? `<div class="toast">${escapeHtml(this.toast)}
         <button data-action="dismiss-toast" aria-label="dismiss">×</button></div>`
      : "";
    this.root.innerHTML = `
      <header class="topbar"><h1>edgefleet</h1><nav>${nav}</nav></header>
      ${banner}${toast}
      <main>${this.renderRoute(route)}</main>`;
  }

  private renderRoute(route: Route): string {
    if (this.snapshot === null) {
      return `<p class="empty">Waiting for the registry…</p>`;
    }
    try {
      switch (route) {
        case "fleet":
          return this.renderFleetPage();
        case "repository":
          return `<section class="panel"><h2>Repository</h2>
            ${renderRepository(this.snapshot.artifacts)}</section>`;
        case "deployments": {
          const view = buildDeploymentView(this.snapshot.deployments);
          return `<section class="panel"><h2>Deployments</h2>
              ${renderDeployments(view)}</section>
            <section class="panel"><h2>Timeline</h2>
              ${renderTimeline(view.timeline)}</section>`;
        }
        case "metrics": {
          const series = buildMetricsSeries(this.snapshot.metrics.samples ?? []);
          return `<section class="panel"><h2>Latency by model version</h2>
              ${renderMetricsChart(series)}${renderLegend(series)}
              ${renderAggregates(this.snapshot.metrics)}</section>`;
        }
        case "assets":
          return `<section class="panel"><h2>Assets</h2>
            ${renderAssets(buildAssetBoard(this.snapshot.assets))}</section>`;
      }
    } catch (err) {
      // a vocabulary violation must never reach the screen as data
      return `<div class="banner" role="alert">${escapeHtml(messageOf(err))}</div>`;
    }
  }

  private renderFleetPage(): string {
    const snap = this.snapshot!;
    const view = buildFleetView(snap.devices, snap.metrics.samples ?? []);
    const watched = snap.watched
      ? `<section class="panel"><h2>Watching</h2>
         ${renderDeploymentCard(snap.watched)}</section>`
      : "";
    return `<section class="panel"><h2>Fleet</h2>${renderFleet(view)}</section>
      ${this.renderDeployForm()}
      ${watched}`;
  }

  private renderDeployForm(): string {
    const snap = this.snapshot!;
    const devices = [...snap.devices].sort((a, b) =>
      a.device_id.localeCompare(b.device_id),
    );
    const deviceOptions = [
      `<option value="">device…</option>`,
      ...devices.map(
        (d) =>
          `<option value="${escapeHtml(d.device_id)}"
            ${this.form.device === d.device_id ? "selected" : ""}>${escapeHtml(d.device_id)}</option>`,
      ),
    ].join("");
    const selectedKey = this.form.artifact ? JSON.stringify(this.form.artifact) : "";
    const artifactOptions = [
      `<option value="">artifact…</option>`,
      ...snap.artifacts.map((a) => {
        const key = JSON.stringify({ name: a.name, version: a.version });
        return `<option value="${escapeHtml(key)}"
          ${key === selectedKey ? "selected" : ""}>${escapeHtml(`${a.name} ${a.version} (${a.precision})`)}</option>`;
      }),
    ].join("");
    const error = this.deployError
      ? `<span class="form-error">${escapeHtml(this.deployError)}</span>`
      : "";
    return `<section class="panel"><h2>Deploy</h2>
      <form data-form="deploy">
        <select data-field="device">${deviceOptions}</select>
        <select data-field="artifact">${artifactOptions}</select>
        <button type="button" data-action="deploy">Deploy</button>
        ${error}
      </form>
    </section>`;
  }
}
