"""Edge device agent: polls the registry, installs bundles, serves inference.

The agent keeps two artifact slots, active and previous, persisted in a
single JSON state file that is only ever replaced atomically.  Installation
is a download-verify-write-swap sequence whose one commit point is the
state-file rename; a crash anywhere leaves either the old slots or the new
ones, never a mix.  Commands are deduplicated per deployment_id, so the
registry's at-least-once delivery converges.
"""

from __future__ import annotations

import base64
import json
import re
import threading
import time
import urllib.parse
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .bundle import ArtifactManifest, IntegrityError, ManifestError, ParseError, unpack
from .client import ApiError, RegistryClient
from .registry import ACTIVE, FAILED, INSTALLING, utc_now
from .store import read_json, sweep_tmp_files, write_bytes_atomic, write_json_atomic
from .vqi import AssetConditionUpdate, ImageFormatError, classify_image

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 60.0
_DONE_KEEP = 256  # dedup entries retained; oldest pruned first


class UnavailableError(RuntimeError):
    """Inference requested while no artifact is active."""


@dataclass(frozen=True)
class InstalledArtifact:
    """A verified bundle on disk plus its loaded model handle."""

    manifest: ArtifactManifest
    path: Path
    model: object  # ModelGraph or QuantizedModel

    @property
    def slot(self) -> dict:
        return {
            "name": self.manifest.name,
            "version": self.manifest.version,
            "path": self.path.name,
        }


@dataclass
class AgentConfig:
    registry_url: str
    device_id: str
    install_root: str
    poll_interval: float = 30.0
    listen: tuple | None = None  # (host, port) for the local inference endpoint
    forward_samples: bool = False
    hardware_profile: str = "simulated"


@dataclass
class AgentState:
    """Durable agent state; slots are {name, version, path} dicts."""

    device_id: str
    active: dict | None = None
    previous: dict | None = None
    current_deployment_id: str | None = None
    done: dict = field(default_factory=dict)  # deployment_id -> terminal state

    def to_doc(self) -> dict:
        return {
            "device_id": self.device_id,
            "active": self.active,
            "previous": self.previous,
            "current_deployment_id": self.current_deployment_id,
            "done": self.done,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AgentState":
        return cls(
            device_id=str(doc["device_id"]),
            active=doc.get("active"),
            previous=doc.get("previous"),
            current_deployment_id=doc.get("current_deployment_id"),
            done=dict(doc.get("done") or {}),
        )


def _slot_matches(slot: dict | None, artifact: dict) -> bool:
    return (slot is not None
            and slot["name"] == artifact["name"]
            and slot["version"] == artifact["version"])


class EdgeAgent:
    """One simulated device. Safe for concurrent inference during installs."""

    def __init__(self, config: AgentConfig):
        self.config = config
        self.client = RegistryClient(config.registry_url)
        self.root = Path(config.install_root)
        self.bundles_dir = self.root / "bundles"
        self.bundles_dir.mkdir(parents=True, exist_ok=True)
        sweep_tmp_files(self.root)
        self._lock = threading.Lock()  # guards state + handle swaps
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._http: ThreadingHTTPServer | None = None
        self._http_thread: threading.Thread | None = None
        self.telemetry_errors = 0
        self.state = self._load_state()
        self._active_handle = self._load_slot(self.state.active)
        if self.state.active is not None and self._active_handle is None:
            # Corrupt bytes must never be served; drop the slot and wait
            # for the registry to redeploy or roll back.
            self.state.active = None
            self._save_state()

    # -- persistence ----------------------------------------------------------

    @property
    def _state_path(self) -> Path:
        return self.root / "state.json"

    def _load_state(self) -> AgentState:
        doc = read_json(self._state_path)
        if doc is None:
            return AgentState(device_id=self.config.device_id)
        state = AgentState.from_doc(doc)
        if state.device_id != self.config.device_id:
            raise ValueError(
                f"install root {self.root} belongs to device "
                f"{state.device_id!r}, not {self.config.device_id!r}"
            )
        return state

    def _save_state(self):
        if len(self.state.done) > _DONE_KEEP:
            for key in list(self.state.done)[: len(self.state.done) - _DONE_KEEP]:
                del self.state.done[key]
        write_json_atomic(self._state_path, self.state.to_doc(), label="agent:state")

    def _bundle_path(self, name: str, version: str) -> Path:
        return self.bundles_dir / f"{name}-{version}.emlm"

    def _load_slot(self, slot: dict | None) -> InstalledArtifact | None:
        """Load and checksum-verify the bundle a slot points at."""
        if slot is None:
            return None
        path = self.bundles_dir / slot["path"]
        try:
            manifest, model = unpack(path.read_bytes())
        except (OSError, IntegrityError, ParseError, ManifestError):
            return None
        if manifest.name != slot["name"] or manifest.version != slot["version"]:
            return None
        return InstalledArtifact(manifest=manifest, path=path, model=model)

    # -- registry interaction ---------------------------------------------------

    def register(self):
        self.client.register_device(self.config.device_id, self.config.hardware_profile)

    def _report(self, deployment_id: str, state: str, detail: str = ""):
        self.client.report_status(deployment_id, state, detail)

    def poll_once(self) -> int:
        """One heartbeat+poll cycle; returns the number of commands handled."""
        commands = self.client.poll_commands(self.config.device_id)
        for command in commands:
            self.handle_command(command)
        return len(commands)

    def handle_command(self, command: dict):
        kind = command.get("type")
        try:
            if kind == "install":
                self.install(command)
            elif kind == "rollback":
                self.rollback_local(command)
            # unknown kinds are ignored; a newer registry may add some
        except ApiError:
            # The registry rejected a status report (e.g. the deployment was
            # superseded while we worked). Drop the command; the registry
            # re-offers anything still non-terminal.
            pass

    # -- install / rollback -------------------------------------------------------

    def install(self, command: dict) -> str:
        dep_id = command["deployment_id"]
        artifact = command["artifact"]
        if dep_id in self.state.done:
            outcome = self.state.done[dep_id]
            self._report(dep_id, outcome, "already handled")
            return outcome
        if _slot_matches(self.state.active, artifact):
            # A previous run committed the swap but the report was lost.
            self._report(dep_id, INSTALLING, "already active")
            self._report(dep_id, ACTIVE, "already active")
            self._finish(dep_id, ACTIVE)
            return ACTIVE

        self.state.current_deployment_id = dep_id
        self._save_state()
        self._report(dep_id, INSTALLING)
        try:
            data = self.client.download_by_path(command["download_path"])
            manifest, model = unpack(data)
            if manifest.name != artifact["name"] or manifest.version != artifact["version"]:
                raise IntegrityError(
                    f"bundle identifies as {manifest.name} {manifest.version}, "
                    f"command targets {artifact['name']} {artifact['version']}"
                )
        except (IntegrityError, ParseError, ManifestError) as e:
            self._report(dep_id, FAILED, f"verification failed: {e}")
            self._finish(dep_id, FAILED)
            return FAILED

        path = self._bundle_path(manifest.name, manifest.version)
        write_bytes_atomic(path, data, label="agent:bundle")
        handle = InstalledArtifact(manifest=manifest, path=path, model=model)
        with self._lock:
            self.state.previous = self.state.active
            self.state.active = handle.slot
            self.state.done[dep_id] = ACTIVE
            self.state.current_deployment_id = None
            self._save_state()  # single commit point: slots + dedup together
            self._active_handle = handle
        self._report(dep_id, ACTIVE)
        return ACTIVE

    def rollback_local(self, command: dict) -> str:
        dep_id = command["deployment_id"]
        artifact = command["artifact"]
        if dep_id in self.state.done:
            outcome = self.state.done[dep_id]
            self._report(dep_id, outcome, "already handled")
            return outcome
        if _slot_matches(self.state.active, artifact):
            self._report(dep_id, INSTALLING, "already active")
            self._report(dep_id, ACTIVE, "already active")
            self._finish(dep_id, ACTIVE)
            return ACTIVE

        self.state.current_deployment_id = dep_id
        self._save_state()
        self._report(dep_id, INSTALLING)
        previous = self.state.previous
        if previous is None:
            self._report(dep_id, FAILED, "no previous version")
            self._finish(dep_id, FAILED)
            return FAILED
        if not _slot_matches(previous, artifact):
            self._report(
                dep_id, FAILED,
                f"previous slot holds {previous['name']} {previous['version']}, "
                f"command targets {artifact['name']} {artifact['version']}",
            )
            self._finish(dep_id, FAILED)
            return FAILED
        handle = self._load_slot(previous)  # no re-download; checksum gate still applies
        if handle is None:
            self._report(dep_id, FAILED, "previous bundle failed verification")
            self._finish(dep_id, FAILED)
            return FAILED
        with self._lock:
            self.state.active = previous
            self.state.previous = None  # the slot is consumed by rollback
            self.state.done[dep_id] = ACTIVE
            self.state.current_deployment_id = None
            self._save_state()
            self._active_handle = handle
        self._report(dep_id, ACTIVE)
        return ACTIVE

    def _finish(self, dep_id: str, outcome: str):
        self.state.done[dep_id] = outcome
        self.state.current_deployment_id = None
        self._save_state()

    # -- inference ----------------------------------------------------------------

    def infer(self, image_bytes: bytes, asset_id: str | None = None) -> dict:
        """Decode -> preprocess -> forward -> postprocess -> condition mapping.

        Returns {label, confidence, condition, model_version, latency_ms}.
        The measurement and the asset condition update are pushed to the
        registry best-effort; a dead registry never fails local inference.
        """
        with self._lock:
            handle = self._active_handle
        if handle is None:
            raise UnavailableError("no artifact is active on this device")
        try:
            result, counters = classify_image(handle.model, handle.manifest, image_bytes)
        except ImageFormatError:
            if self.config.forward_samples:
                self._forward_sample(image_bytes)
            raise
        update = AssetConditionUpdate(
            asset_id=asset_id or f"unassigned-{self.config.device_id}",
            condition=result["condition"],
            confidence=result["confidence"],
            model_version=result["model_version"],
            device_id=self.config.device_id,
            timestamp=utc_now(),
        )
        self._push_telemetry(update, result["label"], result["latency_ms"], counters)
        return result

    def _push_telemetry(self, update: AssetConditionUpdate, label: str,
                        latency_ms: float, counters: OpCounters):
        try:
            self.client.post_measurement({
                "device_id": self.config.device_id,
                "artifact_version": update.model_version,
                "timestamp": update.timestamp,
                "latency_ms": latency_ms,
                "op_counters": counters.snapshot(),
                "predicted_label": label,
                "confidence": update.confidence,
            })
            self.client.post_asset_update(update.to_dict())
        except (ConnectionError, ApiError):
            self.telemetry_errors += 1

    def _forward_sample(self, raw: bytes):
        try:
            self.client.post_sample({
                "sample_id": f"s-{uuid.uuid4().hex}",
                "device_id": self.config.device_id,
                "image_b64": base64.b64encode(raw).decode("ascii"),
                "captured_at": utc_now(),
            })
        except (ConnectionError, ApiError):
            self.telemetry_errors += 1

    def status(self) -> dict:
        with self._lock:
            active = self.state.active
            previous = self.state.previous
        return {
            "device_id": self.config.device_id,
            "active_version": active["version"] if active else None,
            "previous_version": previous["version"] if previous else None,
        }

    # -- run loop -------------------------------------------------------------------

    def run_forever(self):
        """Register, then heartbeat+poll until stopped. Never raises on I/O."""
        backoff = BACKOFF_BASE_S
        while not self._stop.is_set():
            try:
                self.register()
                break
            except (ConnectionError, ApiError):
                if self._stop.wait(backoff):
                    return
                backoff = min(backoff * 2, BACKOFF_CAP_S)
        backoff = BACKOFF_BASE_S
        while not self._stop.is_set():
            try:
                self.poll_once()
                backoff = BACKOFF_BASE_S
                wait = self.config.poll_interval
            except ConnectionError:
                wait = backoff
                backoff = min(backoff * 2, BACKOFF_CAP_S)
            if self._stop.wait(wait):
                return

    def start(self):
        """Run the poll loop (and local endpoint, if configured) in threads."""
        if self._thread is not None:
            raise RuntimeError("agent already started")
        if self.config.listen is not None:
            self._http = make_agent_server(self, *self.config.listen)
            self._http_thread = threading.Thread(
                target=self._http.serve_forever, kwargs={"poll_interval": 0.1},
                name=f"agent-http-{self.config.device_id}", daemon=True,
            )
            self._http_thread.start()
        self._thread = threading.Thread(
            target=self.run_forever, name=f"agent-{self.config.device_id}", daemon=True
        )
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._http is not None:
            self._http.shutdown()
            self._http.server_close()
            self._http_thread.join(timeout=5)
        if self._thread is not None:
            self._thread.join(timeout=10)
        self._thread = None
        self._http = None
        self._http_thread = None

    @property
    def listen_port(self) -> int | None:
        return self._http.server_address[1] if self._http else None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
        return False


# -- local inference endpoint ---------------------------------------------------------

_INFER_RE = re.compile(r"^/infer$")
_STATUS_RE = re.compile(r"^/status$")


class AgentHandler(BaseHTTPRequestHandler):
    """POST /infer (raw PPM body) and GET /status."""

    agent: EdgeAgent  # bound by make_agent_server
    protocol_version = "HTTP/1.1"
    server_version = "edgefleet-agent/0.1"

    def log_message(self, fmt, *args):
        pass

    def _send_json(self, doc: dict, status: int = 200):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        path = urllib.parse.urlparse(self.path).path
        if _STATUS_RE.match(path):
            self._send_json(self.agent.status())
        else:
            self._send_json({"error": f"no route for GET {path}"}, 404)

    def do_POST(self):
        parsed = urllib.parse.urlparse(self.path)
        if not _INFER_RE.match(parsed.path):
            self._send_json({"error": f"no route for POST {parsed.path}"}, 404)
            return
        query = dict(urllib.parse.parse_qsl(parsed.query))
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            result = self.agent.infer(body, asset_id=query.get("asset_id"))
        except UnavailableError as e:
            self._send_json({"error": str(e)}, 503)
            return
        except ImageFormatError as e:
            self._send_json({"error": str(e), "offset": e.offset}, 400)
            return
        self._send_json(result)


def make_agent_server(agent: EdgeAgent, host: str = "127.0.0.1",
                      port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundAgentHandler", (AgentHandler,), {"agent": agent})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def fleet_configs(base: AgentConfig, count: int) -> list:
    """Expand one config into per-device configs for simulated-fleet mode.

    Device i gets id "{device_id}-{i}", a subdirectory install root, and,
    when a listen endpoint is set, consecutive ports starting at the base
    port (a zero base port lets the OS pick each one independently).
    """
    if count < 1:
        raise ValueError("fleet count must be >= 1")
    if count == 1:
        return [base]
    configs = []
    for i in range(1, count + 1):
        listen = None
        if base.listen is not None:
            host, port = base.listen
            listen = (host, port + (i - 1) if port else 0)
        configs.append(AgentConfig(
            registry_url=base.registry_url,
            device_id=f"{base.device_id}-{i}",
            install_root=str(Path(base.install_root) / f"{base.device_id}-{i}"),
            poll_interval=base.poll_interval,
            listen=listen,
            forward_samples=base.forward_samples,
            hardware_profile=base.hardware_profile,
        ))
    return configs
