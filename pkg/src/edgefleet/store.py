"""Crash-safe file persistence: write temp, fsync, atomic rename.

Every mutation in the registry and the agent funnels through
`write_bytes_atomic`, so a reader always observes either the old or the
new file content, never a partial write. Stray ``*.tmp`` files from an
interrupted write are swept at startup.

Fault injection for the crash-safety suite is built in. Each write
carries a label; the environment variable ``EDGEFLEET_CRASH_AT`` names
a point as ``<phase>:<label>`` with phase ``pre`` (nothing written),
``mid`` (temp file written, rename pending) or ``post`` (rename done),
optionally suffixed ``@N`` to fire on the Nth hit. When the point is
reached the process dies immediately via ``os._exit``. Setting
``EDGEFLEET_PERSIST_TRACE=1`` prints every point to stderr instead, so
a test harness can enumerate the points a scenario touches.
"""

from __future__ import annotations

import json
import os
import sys
import threading
from pathlib import Path

CRASH_ENV = "EDGEFLEET_CRASH_AT"
TRACE_ENV = "EDGEFLEET_PERSIST_TRACE"
CRASH_EXIT_CODE = 86

_hits: dict = {}
_hits_lock = threading.Lock()
_tmp_seq = 0


def _checkpoint(point: str):
    """Trace and/or kill the process when `point` is the armed one."""
    if os.environ.get(TRACE_ENV):
        print(f"persist {point}", file=sys.stderr, flush=True)
    spec = os.environ.get(CRASH_ENV)
    if not spec:
        return
    target, _, nth = spec.partition("@")
    if target != point:
        return
    with _hits_lock:
        _hits[point] = _hits.get(point, 0) + 1
        count = _hits[point]
    if count == (int(nth) if nth else 1):
        sys.stderr.write(f"injected crash at {point}\n")
        sys.stderr.flush()
        os._exit(CRASH_EXIT_CODE)


def write_bytes_atomic(path: Path, data: bytes, label: str = "unlabeled"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    global _tmp_seq
    with _hits_lock:
        _tmp_seq += 1
        seq = _tmp_seq
    tmp = path.parent / f"{path.name}.{os.getpid()}.{seq}.tmp"
    _checkpoint(f"pre:{label}")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    _checkpoint(f"mid:{label}")
    os.replace(tmp, path)
    _checkpoint(f"post:{label}")


def write_json_atomic(path: Path, doc, label: str = "unlabeled"):
    text = json.dumps(doc, sort_keys=True, indent=1)
    write_bytes_atomic(path, text.encode("utf-8"), label=label)


def read_json(path: Path):
    """Parsed JSON document, or None when the file does not exist."""
    try:
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))
    except FileNotFoundError:
        return None


def list_json_files(directory: Path) -> list:
    """JSON files in a directory, name-sorted, temp files excluded."""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir() if p.suffix == ".json" and p.is_file()
    )


def sweep_tmp_files(root: Path) -> int:
    """Delete leftovers of interrupted writes; returns how many."""
    root = Path(root)
    if not root.is_dir():
        return 0
    removed = 0
    for p in root.rglob("*.tmp"):
        try:
            p.unlink()
            removed += 1
        except OSError:
            pass
    return removed
