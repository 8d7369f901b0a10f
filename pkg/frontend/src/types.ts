/** Response shapes of the registry JSON API, exactly as the server sends them. */

export const DEPLOYMENT_STATES = [
  "PENDING",
  "DELIVERED",
  "INSTALLING",
  "ACTIVE",
  "FAILED",
  "ROLLED_BACK",
] as const;
export type DeploymentState = (typeof DEPLOYMENT_STATES)[number];

// states a deployment can no longer leave on its own; watching stops here
export const SETTLED_STATES: readonly DeploymentState[] = [
  "ACTIVE",
  "FAILED",
  "ROLLED_BACK",
];

export const DEVICE_STATUSES = ["online", "stale", "offline"] as const;
export type DeviceStatus = (typeof DEVICE_STATUSES)[number];

export const ASSET_CONDITIONS = ["OK", "DEGRADED", "CRITICAL", "UNKNOWN"] as const;
export type AssetCondition = (typeof ASSET_CONDITIONS)[number];

export interface ArtifactRef {
  name: string;
  version: string;
}

export interface Device {
  device_id: string;
  hardware_profile: string;
  registered_at: string;
  last_heartbeat: string;
  status: DeviceStatus;
  active_artifact: ArtifactRef | null;
  previous_artifact: ArtifactRef | null;
}

export interface Artifact {
  name: string;
  version: string;
  precision: string;
  checksum: string;
  byte_size: number;
  labels: string[];
  created_at: string;
}

export interface StateEntry {
  state: DeploymentState;
  timestamp: string;
  detail: string;
}

export interface Deployment {
  deployment_id: string;
  device_id: string;
  kind: "install" | "rollback";
  seq: number;
  state: DeploymentState;
  created_at: string;
  artifact: ArtifactRef;
  state_history: StateEntry[];
  supersedes: string | null;
}

export interface LatencyAggregate {
  count: number;
  mean_latency_ms: number | null;
  p95_latency_ms: number | null;
}

export interface MetricSample {
  timestamp: string;
  latency_ms: number;
  device_id: string;
  artifact_version: string;
}

export interface MetricsSummary extends LatencyAggregate {
  by_version: Record<string, LatencyAggregate>;
  samples?: MetricSample[];
}

export interface Asset {
  asset_id: string;
  asset_type: string;
  condition: AssetCondition;
  confidence: number;
  device_id: string;
  last_update: string;
  model_version: string;
}

/** A server value fell outside the vocabulary the views are allowed to show. */
export class VocabularyError extends Error {}

export function checkDeploymentState(state: string): DeploymentState {
  if (!(DEPLOYMENT_STATES as readonly string[]).includes(state)) {
    throw new VocabularyError(`unknown deployment state ${JSON.stringify(state)}`);
  }
  return state as DeploymentState;
}

export function checkDeviceStatus(status: string): DeviceStatus {
  if (!(DEVICE_STATUSES as readonly string[]).includes(status)) {
    throw new VocabularyError(`unknown device status ${JSON.stringify(status)}`);
  }
  return status as DeviceStatus;
}

export function checkAssetCondition(condition: string): AssetCondition {
  if (!(ASSET_CONDITIONS as readonly string[]).includes(condition)) {
    throw new VocabularyError(`unknown asset condition ${JSON.stringify(condition)}`);
  }
  return condition as AssetCondition;
}
