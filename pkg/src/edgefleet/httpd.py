"""HTTP/JSON front end for the registry, on the standard library server.

Routes map one-to-one onto `Registry` operations; domain error types
decide the status code (not-found 404, conflict and precondition
failures 409, bad input 400). Bodies are UTF-8 JSON except artifact
upload/download, which move raw bundle bytes.

`serve` prints ``listening on <host>:<port>`` once the socket is bound,
so callers that pass port 0 can discover the real port.
"""

from __future__ import annotations

import json
import re
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .bundle import IntegrityError, ManifestError, ParseError
from .registry import (
    ConflictError,
    NotFoundError,
    PreconditionError,
    Registry,
    StateTransitionError,
    ValidationError,
)

_MAX_BODY = 64 * 1024 * 1024

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".svg": "image/svg+xml",
    ".json": "application/json",
    ".ico": "image/x-icon",
}


def _status_for(error: Exception) -> int:
    if isinstance(error, NotFoundError):
        return 404
    if isinstance(error, (ConflictError, PreconditionError, StateTransitionError)):
        return 409
    if isinstance(
        error,
        (ValidationError, IntegrityError, ParseError, ManifestError, ValueError),
    ):
        return 400
    return 500


class RegistryHandler(BaseHTTPRequestHandler):
    server_version = "edgefleet-registry/0.1"
    protocol_version = "HTTP/1.1"

    # set by make_server()
    registry: Registry = None
    console_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default; stderr is for errors
        pass

    # -- plumbing -------------------------------------------------------------

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > _MAX_BODY:
            raise ValidationError(f"body larger than {_MAX_BODY} bytes")
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict:
        raw = self._body()
        if not raw:
            return {}
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValidationError(f"request body is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ValidationError("request body must be a JSON object")
        return doc

    def _send(self, status: int, payload: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_json(self, doc, status: int = 200):
        self._send(status, json.dumps(doc).encode("utf-8"),
                   "application/json; charset=utf-8")

    def _send_error_json(self, error: Exception):
        status = _status_for(error)
        if status == 500:
            print(f"internal error: {error!r}", file=sys.stderr, flush=True)
        message = str(error)
        if isinstance(error, KeyError) and message.startswith(("'", '"')):
            message = message[1:-1]
        self._send_json({"error": message}, status=status)

    def _dispatch(self, method: str):
        url = urlparse(self.path)
        query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        try:
            for pattern, handler_method, handler in _ROUTES:
                if handler_method != method:
                    continue
                m = pattern.match(url.path)
                if m:
                    handler(self, query, *m.groups())
                    return
            if method == "GET" and self._serve_console(url.path):
                return
            self._send_json({"error": f"no route for {method} {url.path}"}, 404)
        except BrokenPipeError:
            pass
        except Exception as e:  # typed errors become status codes
            try:
                self._send_error_json(e)
            except BrokenPipeError:
                pass

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    # -- console static files ---------------------------------------------------

    def _serve_console(self, path: str) -> bool:
        if self.console_dir is None:
            return False
        name = path.lstrip("/") or "index.html"
        if not re.fullmatch(r"[A-Za-z0-9_.-]+(/[A-Za-z0-9_.-]+)*", name):
            return False
        target = (self.console_dir / name).resolve()
        if not str(target).startswith(str(self.console_dir.resolve())):
            return False
        if not target.is_file():
            if path == "/":
                return False
            target = self.console_dir / "index.html"  # SPA fallback
            if not target.is_file():
                return False
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)
        return True

    # -- route handlers -----------------------------------------------------------

    def r_upload_artifact(self, query):
        summary = self.registry.upload_artifact(self._body())
        self._send_json(summary, 201)

    def r_list_artifacts(self, query):
        self._send_json({"artifacts": self.registry.list_artifacts()})

    def r_download_artifact(self, query, name, version):
        data = self.registry.download_artifact(name, version)
        self._send(200, data, "application/octet-stream")

    def r_register_device(self, query):
        body = self._json_body()
        device_id = body.get("device_id", "")
        record = self.registry.register_device(
            device_id, body.get("hardware_profile", "")
        )
        self._send_json(record, 201)

    def r_heartbeat(self, query, device_id):
        self._send_json(self.registry.heartbeat(device_id))

    def r_list_devices(self, query):
        self._send_json({"devices": self.registry.list_devices()})

    def r_create_deployment(self, query):
        body = self._json_body()
        record = self.registry.create_deployment(
            str(body.get("device_id", "")),
            str(body.get("name", "")),
            str(body.get("version", "")),
        )
        self._send_json(record, 201)

    def r_list_deployments(self, query):
        records = self.registry.list_deployments(query.get("device"))
        self._send_json({"deployments": records})

    def r_get_deployment(self, query, deployment_id):
        self._send_json(self.registry.get_deployment(deployment_id))

    def r_report_status(self, query, deployment_id):
        body = self._json_body()
        record = self.registry.report_deployment_status(
            deployment_id, str(body.get("state", "")), str(body.get("detail", ""))
        )
        self._send_json(record)

    def r_rollback(self, query, device_id):
        self._send_json(self.registry.rollback(device_id), 201)

    def r_poll_commands(self, query, device_id):
        self._send_json({"commands": self.registry.poll_commands(device_id)})

    def r_ingest_measurement(self, query):
        self._send_json(self.registry.ingest_measurement(self._json_body()), 201)

    def r_ingest_asset_update(self, query):
        self._send_json(self.registry.ingest_condition_update(self._json_body()), 201)

    def r_list_assets(self, query):
        self._send_json({"assets": self.registry.list_assets()})

    def r_ingest_sample(self, query):
        self._send_json(self.registry.ingest_training_sample(self._json_body()), 201)

    def r_metrics(self, query):
        summary = self.registry.metrics_summary(
            device_id=query.get("device"),
            version=query.get("version"),
            include_samples=query.get("samples") in ("1", "true"),
        )
        self._send_json(summary)


_ROUTES = [
    (re.compile(r"^/api/artifacts$"), "POST", RegistryHandler.r_upload_artifact),
    (re.compile(r"^/api/artifacts$"), "GET", RegistryHandler.r_list_artifacts),
    (re.compile(r"^/api/artifacts/([^/]+)/([^/]+)/download$"), "GET",
     RegistryHandler.r_download_artifact),
    (re.compile(r"^/api/devices$"), "POST", RegistryHandler.r_register_device),
    (re.compile(r"^/api/devices$"), "GET", RegistryHandler.r_list_devices),
    (re.compile(r"^/api/devices/([^/]+)/heartbeat$"), "POST",
     RegistryHandler.r_heartbeat),
    (re.compile(r"^/api/devices/([^/]+)/rollback$"), "POST",
     RegistryHandler.r_rollback),
    (re.compile(r"^/api/devices/([^/]+)/commands$"), "GET",
     RegistryHandler.r_poll_commands),
    (re.compile(r"^/api/deployments$"), "POST", RegistryHandler.r_create_deployment),
    (re.compile(r"^/api/deployments$"), "GET", RegistryHandler.r_list_deployments),
    (re.compile(r"^/api/deployments/([^/]+)$"), "GET",
     RegistryHandler.r_get_deployment),
    (re.compile(r"^/api/deployments/([^/]+)/status$"), "POST",
     RegistryHandler.r_report_status),
    (re.compile(r"^/api/measurements$"), "POST",
     RegistryHandler.r_ingest_measurement),
    (re.compile(r"^/api/assets/updates$"), "POST",
     RegistryHandler.r_ingest_asset_update),
    (re.compile(r"^/api/assets$"), "GET", RegistryHandler.r_list_assets),
    (re.compile(r"^/api/samples$"), "POST", RegistryHandler.r_ingest_sample),
    (re.compile(r"^/api/metrics$"), "GET", RegistryHandler.r_metrics),
]


def make_server(registry: Registry, host: str = "127.0.0.1", port: int = 0,
                console_dir: Path | None = None) -> ThreadingHTTPServer:
    handler = type(
        "BoundRegistryHandler",
        (RegistryHandler,),
        {"registry": registry,
         "console_dir": Path(console_dir) if console_dir else None},
    )
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve(registry: Registry, host: str, port: int,
          console_dir: Path | None = None) -> int:
    """Run until interrupted; prints the bound address for port discovery."""
    server = make_server(registry, host, port, console_dir)
    actual_host, actual_port = server.server_address[:2]
    print(f"listening on {actual_host}:{actual_port}", flush=True)
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


class ServerThread:
    """In-process registry server for tests: start, use base_url, stop."""

    def __init__(self, registry: Registry, host: str = "127.0.0.1",
                 console_dir: Path | None = None):
        self.server = make_server(registry, host, 0, console_dir)
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       kwargs={"poll_interval": 0.1}, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)
