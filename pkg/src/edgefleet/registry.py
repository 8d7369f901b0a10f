"""Fleet registry: artifact repository, device records, deployment
orchestration with rollback, and telemetry/asset/sample ingestion.

Everything lives as JSON files (plus raw bundle files) under one data
directory, written atomically. A device's active and previous artifact
slots are never stored: they are derived by replaying the device's
deployment activations in creation order, so every state change is a
single atomic file write and a crash between writes can only lose a
suffix of operations, never corrupt a slot.

Rollback creates a successor deployment carrying ``supersedes`` before
the rolled-back one is marked, and startup repair completes the marking
if a crash fell in between, so the pair is effectively atomic.
"""

from __future__ import annotations

import base64
import re
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .bundle import IntegrityError, ParseError, read_envelope
from .store import (
    list_json_files,
    read_json,
    sweep_tmp_files,
    write_bytes_atomic,
    write_json_atomic,
)
from .vqi import CONDITIONS

PENDING = "PENDING"
DELIVERED = "DELIVERED"
INSTALLING = "INSTALLING"
ACTIVE = "ACTIVE"
FAILED = "FAILED"
ROLLED_BACK = "ROLLED_BACK"

DEPLOYMENT_STATES = (PENDING, DELIVERED, INSTALLING, ACTIVE, FAILED, ROLLED_BACK)
# Agents may fail before reaching INSTALLING (download or checksum errors),
# so FAILED is reachable from DELIVERED as well.
LEGAL_TRANSITIONS = {
    PENDING: (DELIVERED,),
    DELIVERED: (INSTALLING, FAILED),
    INSTALLING: (ACTIVE, FAILED),
    ACTIVE: (ROLLED_BACK,),
    FAILED: (),
    ROLLED_BACK: (),
}
NON_TERMINAL_STATES = (PENDING, DELIVERED, INSTALLING)

KIND_INSTALL = "install"
KIND_ROLLBACK = "rollback"

ONLINE = "online"
STALE = "stale"
OFFLINE = "offline"

_SAFE_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class NotFoundError(KeyError):
    """Raised when a device, artifact, or deployment id is unknown."""


class ConflictError(ValueError):
    """Raised for duplicate uploads and overlapping deployments."""


class PreconditionError(ValueError):
    """Raised when an operation's domain precondition does not hold."""


class StateTransitionError(ValueError):
    """Raised for moves outside the deployment state machine."""


class ValidationError(ValueError):
    """Raised for malformed request payloads."""


def utc_now() -> str:
    """Microsecond UTC timestamp; fixed width, so string order = time order."""
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def legal_history(states: list) -> bool:
    """True when a state sequence is a path in the transition graph."""
    if not states or states[0] != PENDING:
        return False
    for prev, cur in zip(states, states[1:]):
        if cur not in LEGAL_TRANSITIONS.get(prev, ()):
            return False
    return True


@dataclass
class RegistryConfig:
    data_dir: Path
    stale_after_s: float = 30.0
    offline_after_s: float = 120.0


class Registry:
    """Domain operations over the file store; one instance per process.

    Thread safety: mutations of one device's chain are serialized by a
    per-device lock; uploads and id allocation take narrow global locks.
    Reads go straight to the files and rely on atomic replacement.
    """

    def __init__(self, config: RegistryConfig):
        self.config = config
        self.root = Path(config.data_dir)
        self._locks_guard = threading.Lock()
        self._device_locks: dict = {}
        self._upload_lock = threading.Lock()
        self._seq_lock = threading.Lock()
        self._ingest_lock = threading.Lock()
        for sub in ("artifacts", "devices", "deployments", "measurements",
                    "assets", "samples"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        sweep_tmp_files(self.root)
        self._repair_rollbacks()

    # -- locking helpers ----------------------------------------------------

    def _device_lock(self, device_id: str) -> threading.Lock:
        with self._locks_guard:
            if device_id not in self._device_locks:
                self._device_locks[device_id] = threading.Lock()
            return self._device_locks[device_id]

    def _next_seq(self) -> int:
        """Monotonic id counter, persisted before use (gaps are fine)."""
        path = self.root / "seq.json"
        with self._seq_lock:
            doc = read_json(path) or {"next": 1}
            seq = int(doc["next"])
            write_json_atomic(path, {"next": seq + 1}, label="registry:seq")
            return seq

    # -- artifacts ----------------------------------------------------------

    def _artifact_path(self, name: str, version: str) -> Path:
        if not _SAFE_NAME_RE.match(name):
            raise ValidationError(f"artifact name {name!r} is not a safe identifier")
        if not _SAFE_NAME_RE.match(version):
            raise ValidationError(f"version {version!r} is not a safe identifier")
        return self.root / "artifacts" / name / f"{version}.emlm"

    def upload_artifact(self, data: bytes) -> dict:
        """Store a verified bundle; idempotent for identical bytes."""
        manifest, _ = read_envelope(data)  # checksum gate
        path = self._artifact_path(manifest.name, manifest.version)
        with self._upload_lock:
            if path.exists():
                # Identity is the whole envelope: same blob under a manifest
                # that differs in any field is still a conflicting re-release.
                if path.read_bytes() == data:
                    return self._artifact_summary(manifest)
                raise ConflictError(
                    f"{manifest.name} {manifest.version} already exists "
                    f"with different contents"
                )
            write_bytes_atomic(path, data, label="registry:artifact-blob")
        return self._artifact_summary(manifest)

    @staticmethod
    def _artifact_summary(manifest) -> dict:
        return {
            "name": manifest.name,
            "version": manifest.version,
            "precision": manifest.precision,
            "checksum": manifest.checksum,
            "byte_size": manifest.byte_size,
            "labels": list(manifest.labels),
            "created_at": manifest.created_at,
        }

    def list_artifacts(self) -> list:
        out = []
        base = self.root / "artifacts"
        for name_dir in sorted(p for p in base.iterdir() if p.is_dir()):
            for f in sorted(name_dir.glob("*.emlm")):
                try:
                    manifest, _ = read_envelope(f.read_bytes())
                except (IntegrityError, ParseError):
                    continue  # quarantined by omission; download still gates
                out.append(self._artifact_summary(manifest))
        return out

    def artifact_exists(self, name: str, version: str) -> bool:
        return self._artifact_path(name, version).exists()

    def download_artifact(self, name: str, version: str) -> bytes:
        path = self._artifact_path(name, version)
        if not path.exists():
            raise NotFoundError(f"artifact {name} {version} not found")
        data = path.read_bytes()
        read_envelope(data)  # never serve bytes that fail verification
        return data

    # -- devices ------------------------------------------------------------

    def _device_path(self, device_id: str) -> Path:
        if not _SAFE_NAME_RE.match(device_id):
            raise ValidationError(f"device id {device_id!r} is not a safe identifier")
        return self.root / "devices" / f"{device_id}.json"

    def register_device(self, device_id: str, hardware_profile: str = "") -> dict:
        """Create or refresh a device; re-registration is idempotent."""
        path = self._device_path(device_id)
        now = utc_now()
        with self._device_lock(device_id):
            doc = read_json(path)
            if doc is None:
                doc = {
                    "device_id": device_id,
                    "hardware_profile": hardware_profile,
                    "registered_at": now,
                    "last_heartbeat": now,
                }
            else:
                if hardware_profile:
                    doc["hardware_profile"] = hardware_profile
                doc["last_heartbeat"] = max(doc["last_heartbeat"], now)
            write_json_atomic(path, doc, label="registry:device-register")
        return self.device_record(device_id)

    def heartbeat(self, device_id: str) -> dict:
        path = self._device_path(device_id)
        with self._device_lock(device_id):
            doc = read_json(path)
            if doc is None:
                raise NotFoundError(f"device {device_id} not registered")
            doc["last_heartbeat"] = max(doc["last_heartbeat"], utc_now())
            write_json_atomic(path, doc, label="registry:heartbeat")
        return self.device_record(device_id)

    def _derive_status(self, last_heartbeat: str) -> str:
        try:
            then = datetime.strptime(last_heartbeat, "%Y-%m-%dT%H:%M:%S.%fZ")
        except ValueError:
            then = datetime.strptime(last_heartbeat, "%Y-%m-%dT%H:%M:%SZ")
        age = (datetime.now(timezone.utc) - then.replace(tzinfo=timezone.utc)).total_seconds()
        if age > self.config.offline_after_s:
            return OFFLINE
        if age > self.config.stale_after_s:
            return STALE
        return ONLINE

    def _derive_slots(self, device_id: str) -> tuple:
        """Replay activations in creation order -> (active, previous).

        The single-in-flight rule means a device's deployments activate
        in the order they were created, so the creation sequence number
        is a valid activation order.
        """
        active = previous = None
        for doc in self._device_deployments(device_id):
            if ACTIVE not in [h["state"] for h in doc["state_history"]]:
                continue
            artifact = (doc["artifact"]["name"], doc["artifact"]["version"])
            if doc["kind"] == KIND_ROLLBACK:
                active, previous = artifact, None  # previous slot consumed
            else:
                active, previous = artifact, active
        return active, previous

    def device_record(self, device_id: str) -> dict:
        doc = read_json(self._device_path(device_id))
        if doc is None:
            raise NotFoundError(f"device {device_id} not registered")
        active, previous = self._derive_slots(device_id)
        return {
            "device_id": doc["device_id"],
            "hardware_profile": doc.get("hardware_profile", ""),
            "registered_at": doc["registered_at"],
            "last_heartbeat": doc["last_heartbeat"],
            "status": self._derive_status(doc["last_heartbeat"]),
            "active_artifact": _slot_dict(active),
            "previous_artifact": _slot_dict(previous),
        }

    def list_devices(self) -> list:
        out = []
        for path in list_json_files(self.root / "devices"):
            out.append(self.device_record(path.stem))
        return out

    # -- deployments ----------------------------------------------------------

    def _deployment_path(self, deployment_id: str) -> Path:
        return self.root / "deployments" / f"{deployment_id}.json"

    def _all_deployments(self) -> list:
        docs = [read_json(p) for p in list_json_files(self.root / "deployments")]
        docs = [d for d in docs if d is not None]
        docs.sort(key=lambda d: d["seq"])
        return docs

    def _device_deployments(self, device_id: str) -> list:
        return [d for d in self._all_deployments() if d["device_id"] == device_id]

    def get_deployment(self, deployment_id: str) -> dict:
        doc = read_json(self._deployment_path(deployment_id))
        if doc is None:
            raise NotFoundError(f"deployment {deployment_id} not found")
        return doc

    def list_deployments(self, device_id: str | None = None) -> list:
        if device_id is None:
            return self._all_deployments()
        return self._device_deployments(device_id)

    def _in_flight(self, device_id: str):
        for doc in self._device_deployments(device_id):
            if doc["state"] in NON_TERMINAL_STATES:
                return doc
        return None

    def _new_deployment(self, device_id: str, artifact: tuple, kind: str,
                        supersedes: str | None = None) -> dict:
        seq = self._next_seq()
        now = utc_now()
        return {
            "deployment_id": f"dep-{seq:06d}-{uuid.uuid4().hex[:8]}",
            "seq": seq,
            "device_id": device_id,
            "artifact": {"name": artifact[0], "version": artifact[1]},
            "kind": kind,
            "supersedes": supersedes,
            "state": PENDING,
            "state_history": [{"state": PENDING, "timestamp": now, "detail": ""}],
            "created_at": now,
        }

    def create_deployment(self, device_id: str, name: str, version: str) -> dict:
        """New install deployment; visible to the device's next poll."""
        self.device_record(device_id)  # not-found gate
        if not self.artifact_exists(name, version):
            raise NotFoundError(f"artifact {name} {version} not found")
        with self._device_lock(device_id):
            stuck = self._in_flight(device_id)
            if stuck is not None:
                raise ConflictError(
                    f"deployment {stuck['deployment_id']} is already in flight "
                    f"({stuck['state']})"
                )
            doc = self._new_deployment(device_id, (name, version), KIND_INSTALL)
            write_json_atomic(
                self._deployment_path(doc["deployment_id"]), doc,
                label="registry:deployment-create",
            )
        return doc

    def _append_state(self, doc: dict, state: str, detail: str, label: str):
        now = utc_now()
        last = doc["state_history"][-1]["timestamp"]
        doc["state"] = state
        doc["state_history"].append(
            {"state": state, "timestamp": max(now, last), "detail": detail}
        )
        write_json_atomic(self._deployment_path(doc["deployment_id"]), doc, label=label)

    def poll_commands(self, device_id: str) -> list:
        """At most one actionable command; re-offered until acknowledged."""
        self.heartbeat(device_id)  # also the not-found gate
        with self._device_lock(device_id):
            doc = self._in_flight(device_id)
            if doc is None:
                return []
            if doc["state"] == PENDING:
                self._append_state(doc, DELIVERED, "delivered to device",
                                   label="registry:deployment-deliver")
            name = doc["artifact"]["name"]
            version = doc["artifact"]["version"]
            command = {
                "type": doc["kind"],
                "deployment_id": doc["deployment_id"],
                "artifact": {"name": name, "version": version},
                "download_path": f"/api/artifacts/{name}/{version}/download",
            }
            return [command]

    def report_deployment_status(self, deployment_id: str, state: str,
                                 detail: str = "") -> dict:
        if state not in (INSTALLING, ACTIVE, FAILED):
            raise ValidationError(
                f"devices may only report INSTALLING, ACTIVE or FAILED, got {state!r}"
            )
        doc = self.get_deployment(deployment_id)
        with self._device_lock(doc["device_id"]):
            doc = self.get_deployment(deployment_id)
            if doc["state"] == state:
                return doc  # duplicate report of the same state is a no-op
            if state not in LEGAL_TRANSITIONS[doc["state"]]:
                raise StateTransitionError(
                    f"cannot move deployment from {doc['state']} to {state}"
                )
            self._append_state(doc, state, detail, label="registry:deployment-status")
        return doc

    def rollback(self, device_id: str) -> dict:
        """Create a rollback deployment targeting the previous artifact.

        Write order matters for crash consistency: the successor (with
        `supersedes`) is persisted first, then the old deployment is
        marked ROLLED_BACK; `_repair_rollbacks` finishes the second
        write after a crash between the two.
        """
        self.device_record(device_id)
        with self._device_lock(device_id):
            stuck = self._in_flight(device_id)
            if stuck is not None:
                raise ConflictError(
                    f"deployment {stuck['deployment_id']} is in flight; "
                    f"wait for it to finish"
                )
            active, previous = self._derive_slots(device_id)
            if previous is None:
                raise PreconditionError("nothing to roll back to")
            current = self._last_activated(device_id)
            doc = self._new_deployment(
                device_id, previous, KIND_ROLLBACK,
                supersedes=current["deployment_id"] if current else None,
            )
            write_json_atomic(
                self._deployment_path(doc["deployment_id"]), doc,
                label="registry:deployment-rollback-create",
            )
            if current is not None and current["state"] == ACTIVE:
                self._append_state(current, ROLLED_BACK,
                                   f"superseded by {doc['deployment_id']}",
                                   label="registry:deployment-rollback-mark")
        return doc

    def _last_activated(self, device_id: str):
        newest = None
        for doc in self._device_deployments(device_id):
            if ACTIVE in [h["state"] for h in doc["state_history"]]:
                newest = doc
        return newest

    def _repair_rollbacks(self):
        """Finish half-done rollbacks: successor exists, old still ACTIVE."""
        docs = self._all_deployments()
        by_id = {d["deployment_id"]: d for d in docs}
        for doc in docs:
            target_id = doc.get("supersedes")
            if doc["kind"] != KIND_ROLLBACK or not target_id:
                continue
            target = by_id.get(target_id)
            if target is not None and target["state"] == ACTIVE:
                self._append_state(target, ROLLED_BACK,
                                   f"superseded by {doc['deployment_id']} (repair)",
                                   label="registry:deployment-rollback-mark")

    # -- telemetry, assets, samples -------------------------------------------

    def ingest_measurement(self, body: dict) -> dict:
        device_id = _required(body, "device_id")
        self.device_record(device_id)
        latency = float(_required(body, "latency_ms"))
        confidence = float(body.get("confidence", 0.0))
        if latency < 0:
            raise ValidationError("latency_ms must be nonnegative")
        if not 0.0 <= confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        counters = body.get("op_counters", {})
        doc = {
            "device_id": device_id,
            "artifact_version": str(_required(body, "artifact_version")),
            "timestamp": str(body.get("timestamp") or utc_now()),
            "latency_ms": latency,
            "op_counters": {
                "float_mul_adds": int(counters.get("float_mul_adds", 0)),
                "int_mul_adds": int(counters.get("int_mul_adds", 0)),
                "range_scans": int(counters.get("range_scans", 0)),
            },
            "predicted_label": str(body.get("predicted_label", "")),
            "confidence": confidence,
        }
        with self._ingest_lock:
            seq = self._next_seq()
            path = self.root / "measurements" / f"m-{seq:08d}.json"
            write_json_atomic(path, doc, label="registry:measurement")
        return {"stored": True}

    def ingest_condition_update(self, body: dict) -> dict:
        device_id = _required(body, "device_id")
        self.device_record(device_id)
        asset_id = str(_required(body, "asset_id"))
        if not _SAFE_NAME_RE.match(asset_id):
            raise ValidationError(f"asset id {asset_id!r} is not a safe identifier")
        condition = str(_required(body, "condition"))
        if condition not in CONDITIONS:
            raise ValidationError(f"unknown condition {condition!r}")
        confidence = float(_required(body, "confidence"))
        if not 0.0 <= confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        timestamp = str(body.get("timestamp") or utc_now())
        path = self.root / "assets" / f"{asset_id}.json"
        with self._ingest_lock:
            existing = read_json(path)
            if existing is not None and existing["last_update"] > timestamp:
                return {"stored": True, "applied": False}  # stale update
            doc = {
                "asset_id": asset_id,
                "asset_type": str(body.get("asset_type")
                                  or (existing or {}).get("asset_type", "asset")),
                "condition": condition,
                "confidence": confidence,
                "last_update": timestamp,
                "device_id": device_id,
                "model_version": str(body.get("model_version", "")),
            }
            write_json_atomic(path, doc, label="registry:asset")
        return {"stored": True, "applied": True}

    def list_assets(self) -> list:
        docs = [read_json(p) for p in list_json_files(self.root / "assets")]
        return [d for d in docs if d is not None]

    def ingest_training_sample(self, body: dict) -> dict:
        device_id = _required(body, "device_id")
        self.device_record(device_id)
        sample_id = str(body.get("sample_id") or f"s-{uuid.uuid4().hex}")
        if not _SAFE_NAME_RE.match(sample_id):
            raise ValidationError(f"sample id {sample_id!r} is not a safe identifier")
        try:
            image = base64.b64decode(str(_required(body, "image_b64")), validate=True)
        except Exception:
            raise ValidationError("image_b64 is not valid base64") from None
        meta_path = self.root / "samples" / f"{sample_id}.json"
        with self._ingest_lock:
            if meta_path.exists():
                raise ConflictError(f"sample {sample_id} already exists")
            write_bytes_atomic(self.root / "samples" / f"{sample_id}.bin", image,
                               label="registry:sample")
            doc = {
                "sample_id": sample_id,
                "label": body.get("label"),
                "device_id": device_id,
                "captured_at": str(body.get("captured_at") or utc_now()),
                "byte_size": len(image),
            }
            write_json_atomic(meta_path, doc, label="registry:sample")
        return {"sample_id": sample_id}

    # -- metrics ----------------------------------------------------------------

    def metrics_summary(self, device_id: str | None = None,
                        version: str | None = None,
                        include_samples: bool = False) -> dict:
        rows = []
        for path in list_json_files(self.root / "measurements"):
            doc = read_json(path)
            if doc is None:
                continue
            if device_id is not None and doc["device_id"] != device_id:
                continue
            if version is not None and doc["artifact_version"] != version:
                continue
            rows.append(doc)
        summary = _aggregate(rows)
        by_version: dict = {}
        for row in rows:
            by_version.setdefault(row["artifact_version"], []).append(row)
        summary["by_version"] = {v: _aggregate(r) for v, r in sorted(by_version.items())}
        if include_samples:
            summary["samples"] = [
                {
                    "timestamp": r["timestamp"],
                    "latency_ms": r["latency_ms"],
                    "device_id": r["device_id"],
                    "artifact_version": r["artifact_version"],
                }
                for r in sorted(rows, key=lambda r: r["timestamp"])
            ]
        return summary


def _aggregate(rows: list) -> dict:
    if not rows:
        return {"count": 0, "mean_latency_ms": None, "p95_latency_ms": None}
    latencies = sorted(r["latency_ms"] for r in rows)
    n = len(latencies)
    # nearest-rank percentile: smallest value covering 95% of the sample
    rank = max(0, -(-95 * n // 100) - 1)
    return {
        "count": n,
        "mean_latency_ms": sum(latencies) / n,
        "p95_latency_ms": latencies[rank],
    }


def _slot_dict(slot):
    if slot is None:
        return None
    return {"name": slot[0], "version": slot[1]}


def _required(body: dict, key: str):
    if not isinstance(body, dict) or key not in body or body[key] in (None, ""):
        raise ValidationError(f"missing required field {key!r}")
    return body[key]
