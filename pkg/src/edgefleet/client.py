"""Thin urllib client for the registry API.

Non-2xx responses raise `ApiError` carrying the HTTP status and the
server's error detail; transport failures surface as `ConnectionError`
so callers can tell "server said no" from "server unreachable".
"""

from __future__ import annotations

import json
import urllib.error
import urllib.parse
import urllib.request


class ApiError(Exception):
    """Registry replied with an error status."""

    def __init__(self, status: int, message: str):
        super().__init__(f"HTTP {status}: {message}")
        self.status = status
        self.message = message


def _request(method: str, url: str, data: bytes | None, content_type: str,
             timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", content_type)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as e:
        body = e.read()
        try:
            detail = json.loads(body.decode("utf-8")).get("error", "")
        except (ValueError, UnicodeDecodeError):
            detail = body.decode("utf-8", errors="replace")[:200]
        raise ApiError(e.code, detail or e.reason) from None
    except (urllib.error.URLError, TimeoutError, OSError) as e:
        raise ConnectionError(f"{method} {url}: {e}") from None


class RegistryClient:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _json(self, method: str, path: str, body: dict | None = None) -> dict:
        data = json.dumps(body).encode("utf-8") if body is not None else None
        _, raw = _request(method, self.base_url + path, data,
                          "application/json; charset=utf-8", self.timeout)
        return json.loads(raw.decode("utf-8")) if raw else {}

    # artifacts
    def upload_artifact(self, bundle_bytes: bytes) -> dict:
        _, raw = _request("POST", self.base_url + "/api/artifacts", bundle_bytes,
                          "application/octet-stream", self.timeout)
        return json.loads(raw.decode("utf-8"))

    def list_artifacts(self) -> list:
        return self._json("GET", "/api/artifacts")["artifacts"]

    def download_artifact(self, name: str, version: str) -> bytes:
        path = f"/api/artifacts/{urllib.parse.quote(name)}/{urllib.parse.quote(version)}/download"
        _, raw = _request("GET", self.base_url + path, None, "", self.timeout)
        return raw

    def download_by_path(self, path: str) -> bytes:
        _, raw = _request("GET", self.base_url + path, None, "", self.timeout)
        return raw

    # devices
    def register_device(self, device_id: str, hardware_profile: str = "") -> dict:
        return self._json("POST", "/api/devices",
                          {"device_id": device_id,
                           "hardware_profile": hardware_profile})

    def heartbeat(self, device_id: str) -> dict:
        return self._json("POST", f"/api/devices/{urllib.parse.quote(device_id)}/heartbeat", {})

    def list_devices(self) -> list:
        return self._json("GET", "/api/devices")["devices"]

    def poll_commands(self, device_id: str) -> list:
        return self._json("GET", f"/api/devices/{urllib.parse.quote(device_id)}/commands")["commands"]

    # deployments
    def create_deployment(self, device_id: str, name: str, version: str) -> dict:
        return self._json("POST", "/api/deployments",
                          {"device_id": device_id, "name": name, "version": version})

    def get_deployment(self, deployment_id: str) -> dict:
        return self._json("GET", f"/api/deployments/{urllib.parse.quote(deployment_id)}")

    def list_deployments(self, device_id: str | None = None) -> list:
        suffix = f"?device={urllib.parse.quote(device_id)}" if device_id else ""
        return self._json("GET", f"/api/deployments{suffix}")["deployments"]

    def report_status(self, deployment_id: str, state: str, detail: str = "") -> dict:
        return self._json("POST",
                          f"/api/deployments/{urllib.parse.quote(deployment_id)}/status",
                          {"state": state, "detail": detail})

    def rollback(self, device_id: str) -> dict:
        return self._json("POST", f"/api/devices/{urllib.parse.quote(device_id)}/rollback", {})

    # telemetry
    def post_measurement(self, body: dict) -> dict:
        return self._json("POST", "/api/measurements", body)

    def post_asset_update(self, body: dict) -> dict:
        return self._json("POST", "/api/assets/updates", body)

    def list_assets(self) -> list:
        return self._json("GET", "/api/assets")["assets"]

    def post_sample(self, body: dict) -> dict:
        return self._json("POST", "/api/samples", body)

    def metrics(self, device: str | None = None, version: str | None = None,
                samples: bool = False) -> dict:
        params = {}
        if device:
            params["device"] = device
        if version:
            params["version"] = version
        if samples:
            params["samples"] = "1"
        suffix = ("?" + urllib.parse.urlencode(params)) if params else ""
        return self._json("GET", f"/api/metrics{suffix}")
