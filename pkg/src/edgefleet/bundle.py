"""Versioned, checksummed model bundles (`.emlm` files).

A bundle is the unit the registry stores and agents install:

    u32 LE manifest length | canonical manifest JSON | weights blob

The weights blob is a deterministic little-endian serialization of a
float32 graph or a quantized graph: magic ``EMLM``, format version u16,
a small header (mode, input shape, labels, frozen activation params for
static mode), then one record per layer.  Tensor payloads are fp32,
int8 with {fp32 scale, i32 zero point}, or i32 with an fp32 scale (the
quantized biases).  Serializing the same model twice yields identical
bytes, so checksums are reproducible.

The manifest is canonical JSON (sorted keys, no insignificant
whitespace) and carries the SHA-256 of the blob; `unpack` verifies the
checksum before it deserializes anything.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .quantize import (
    ASYMMETRIC,
    DYNAMIC,
    STATIC,
    SYMMETRIC,
    QLinear,
    QTensor,
    QuantizationParams,
    QuantizedModel,
)
from .tensor import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ModelGraph,
    ReLU,
    Softmax,
)

PRECISION_FP32 = "fp32"
PRECISION_INT8_STATIC = "int8-static"
PRECISION_INT8_DYNAMIC = "int8-dynamic"
PRECISIONS = (PRECISION_FP32, PRECISION_INT8_STATIC, PRECISION_INT8_DYNAMIC)

_MAGIC = b"EMLM"
_FORMAT_VERSION = 1

_MODE_CODES = {PRECISION_FP32: 0, PRECISION_INT8_STATIC: 1, PRECISION_INT8_DYNAMIC: 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}

_TAG_DENSE = 1
_TAG_CONV2D = 2
_TAG_RELU = 3
_TAG_MAXPOOL2D = 4
_TAG_FLATTEN = 5
_TAG_SOFTMAX = 6

_KIND_F32 = 0
_KIND_INT8 = 1  # + fp32 scale, i32 zero point
_KIND_I32 = 2  # + fp32 scale

_VERSION_RE = re.compile(r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)$")
_CHECKSUM_RE = re.compile(r"^[0-9a-f]{64}$")


class ManifestError(ValueError):
    """Raised for invalid manifest fields (version, labels, precision)."""


class IntegrityError(ValueError):
    """Raised when bundle bytes disagree with their manifest."""


class ParseError(ValueError):
    """Raised for malformed bundle bytes; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def parse_version(version: str) -> tuple[int, int, int]:
    """Parse a strict major.minor.patch version string."""
    m = _VERSION_RE.match(version) if isinstance(version, str) else None
    if m is None:
        raise ManifestError(f"invalid version string {version!r}")
    return tuple(int(g) for g in m.groups())


def compare_versions(a: str, b: str) -> int:
    """Numeric semantic-version ordering: -1, 0 or 1."""
    va, vb = parse_version(a), parse_version(b)
    return (va > vb) - (va < vb)


def blob_checksum(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ArtifactManifest:
    """The repository's unit of record for one (name, version) artifact."""

    name: str
    version: str
    precision: str
    input_shape: tuple
    labels: tuple
    condition_map: dict  # label -> condition category
    checksum: str
    created_at: str
    byte_size: int
    confidence_floor: float = 0.5

    def __post_init__(self):
        if not self.name:
            raise ManifestError("artifact name must be nonempty")
        parse_version(self.version)
        if self.precision not in PRECISIONS:
            raise ManifestError(f"unknown precision {self.precision!r}")
        if not self.labels:
            raise ManifestError("labels must be nonempty")
        missing = [lb for lb in self.labels if lb not in self.condition_map]
        if missing:
            raise ManifestError(f"labels missing from condition_map: {missing}")
        if not _CHECKSUM_RE.match(self.checksum):
            raise ManifestError("checksum must be 64 lowercase hex characters")
        if self.byte_size < 0:
            raise ManifestError("byte_size must be nonnegative")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ManifestError("confidence_floor must lie in [0, 1]")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "labels", tuple(str(lb) for lb in self.labels))

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, no insignificant whitespace."""
        doc = {
            "byte_size": self.byte_size,
            "checksum": self.checksum,
            "condition_map": dict(self.condition_map),
            "confidence_floor": self.confidence_floor,
            "created_at": self.created_at,
            "input_shape": list(self.input_shape),
            "labels": list(self.labels),
            "name": self.name,
            "precision": self.precision,
            "version": self.version,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ArtifactManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ManifestError(f"manifest is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ManifestError("manifest JSON must be an object")
        try:
            return cls(
                name=doc["name"],
                version=doc["version"],
                precision=doc["precision"],
                input_shape=tuple(doc["input_shape"]),
                labels=tuple(doc["labels"]),
                condition_map=dict(doc["condition_map"]),
                checksum=doc["checksum"],
                created_at=doc["created_at"],
                byte_size=int(doc["byte_size"]),
                confidence_floor=float(doc.get("confidence_floor", 0.5)),
            )
        except KeyError as e:
            raise ManifestError(f"manifest missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class ArtifactBundle:
    manifest: ArtifactManifest
    blob: bytes

    def __post_init__(self):
        if blob_checksum(self.blob) != self.manifest.checksum:
            raise IntegrityError("blob checksum does not match manifest")
        if len(self.blob) != self.manifest.byte_size:
            raise IntegrityError("blob length does not match manifest byte_size")

    def to_bytes(self) -> bytes:
        mjson = self.manifest.to_json().encode("utf-8")
        return struct.pack("<I", len(mjson)) + mjson + self.blob


# ---------------------------------------------------------------------------
# Weights blob codec
# ---------------------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def raw(self, data: bytes):
        self.buf += data

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u16(self, v: int):
        self.buf += struct.pack("<H", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def i32(self, v: int):
        self.buf += struct.pack("<i", v)

    def f32(self, v: float):
        self.buf += struct.pack("<f", v)

    def text(self, s: str):
        data = s.encode("utf-8")
        self.u32(len(data))
        self.raw(data)


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # reported offsets are relative to the whole file

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("unexpected end of data", self.offset)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def text(self) -> str:
        at = self.offset
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("string is not valid UTF-8", at) from None

    def done(self) -> bool:
        return self.pos == len(self.data)


def _write_dims(w: _Writer, shape: tuple):
    w.u32(len(shape))
    for d in shape:
        w.u32(int(d))


def _read_dims(r: _Reader) -> tuple:
    at = r.offset
    ndim = r.u32()
    if ndim > 8:
        raise ParseError(f"implausible tensor rank {ndim}", at)
    return tuple(r.u32() for _ in range(ndim))


def _write_f32_tensor(w: _Writer, arr: np.ndarray):
    w.u8(_KIND_F32)
    _write_dims(w, arr.shape)
    w.raw(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_q_tensor(w: _Writer, qt: QTensor):
    w.u8(_KIND_INT8)
    _write_dims(w, qt.shape)
    w.f32(qt.params.scale)
    w.i32(qt.params.zero_point)
    w.raw(np.ascontiguousarray(qt.qdata, dtype=np.int8).tobytes())


def _write_i32_tensor(w: _Writer, arr: np.ndarray, scale: float):
    w.u8(_KIND_I32)
    _write_dims(w, arr.shape)
    w.f32(scale)
    w.raw(np.ascontiguousarray(arr, dtype="<i4").tobytes())


def _read_tensor(r: _Reader, expect_kind: int):
    """Read one tensor payload; returns kind-specific values."""
    at = r.offset
    kind = r.u8()
    if kind != expect_kind:
        raise ParseError(f"expected tensor kind {expect_kind}, found {kind}", at)
    dims = _read_dims(r)
    count = 1
    for d in dims:
        count *= d
    if kind == _KIND_F32:
        raw = r._take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).reshape(dims).copy()
    if kind == _KIND_INT8:
        scale = r.f32()
        zp = r.i32()
        if zp != 0:
            raise ParseError("stored int8 weights must have zero point 0", at)
        raw = r._take(count)
        arr = np.frombuffer(raw, dtype=np.int8, count=count).reshape(dims).copy()
        try:
            params = QuantizationParams(scale=scale, zero_point=0, scheme=SYMMETRIC)
            return QTensor(qdata=arr, params=params)
        except ValueError as e:
            raise ParseError(f"invalid quantized tensor: {e}", at) from None
    scale = r.f32()
    raw = r._take(4 * count)
    arr = np.frombuffer(raw, dtype="<i4", count=count).reshape(dims).copy()
    return arr, scale


def serialize_model(model) -> bytes:
    """Deterministic weights blob for a float32 or quantized graph."""
    w = _Writer()
    w.raw(_MAGIC)
    w.u16(_FORMAT_VERSION)

    if isinstance(model, ModelGraph):
        w.u8(_MODE_CODES[PRECISION_FP32])
        _write_header_common(w, model.input_shape, model.labels)
        w.u32(len(model.layers))
        for layer in model.layers:
            _write_fp32_layer(w, layer)
        return bytes(w.buf)

    if isinstance(model, QuantizedModel):
        precision = PRECISION_INT8_STATIC if model.mode == STATIC else PRECISION_INT8_DYNAMIC
        w.u8(_MODE_CODES[precision])
        _write_header_common(w, model.input_shape, model.labels)
        if model.mode == STATIC:
            w.u32(len(model.activation_params))
            for p in model.activation_params:
                w.f32(p.scale)
                w.i32(p.zero_point)
        w.u32(len(model.layers))
        for entry in model.layers:
            _write_quantized_layer(w, entry)
        return bytes(w.buf)

    raise TypeError(f"cannot serialize {type(model).__name__}")


def _write_header_common(w: _Writer, input_shape: tuple, labels):
    _write_dims(w, tuple(input_shape))
    w.u32(len(labels))
    for lb in labels:
        w.text(str(lb))


def _write_fp32_layer(w: _Writer, layer):
    if isinstance(layer, Dense):
        w.u8(_TAG_DENSE)
        _write_f32_tensor(w, layer.weights)
        _write_f32_tensor(w, layer.bias)
    elif isinstance(layer, Conv2D):
        w.u8(_TAG_CONV2D)
        w.u32(layer.stride)
        w.u32(layer.padding)
        _write_f32_tensor(w, layer.kernels)
        _write_f32_tensor(w, layer.bias)
    elif isinstance(layer, ReLU):
        w.u8(_TAG_RELU)
    elif isinstance(layer, MaxPool2D):
        w.u8(_TAG_MAXPOOL2D)
        w.u32(layer.window)
    elif isinstance(layer, Flatten):
        w.u8(_TAG_FLATTEN)
    elif isinstance(layer, Softmax):
        w.u8(_TAG_SOFTMAX)
    else:
        raise TypeError(f"cannot serialize layer type {type(layer).__name__}")


def _write_quantized_layer(w: _Writer, entry: tuple):
    kind = entry[0]
    if kind == "dense":
        qlin: QLinear = entry[1]
        w.u8(_TAG_DENSE)
        _write_q_tensor(w, qlin.weights)
        _write_i32_tensor(w, qlin.bias_q, qlin.bias_scale)
    elif kind == "conv2d":
        qlin, stride, padding = entry[1], entry[2], entry[3]
        w.u8(_TAG_CONV2D)
        w.u32(stride)
        w.u32(padding)
        _write_q_tensor(w, qlin.weights)
        _write_i32_tensor(w, qlin.bias_q, qlin.bias_scale)
    elif kind == "relu":
        w.u8(_TAG_RELU)
    elif kind == "maxpool2d":
        w.u8(_TAG_MAXPOOL2D)
        w.u32(entry[1])
    elif kind == "flatten":
        w.u8(_TAG_FLATTEN)
    elif kind == "softmax":
        w.u8(_TAG_SOFTMAX)
    else:
        raise TypeError(f"cannot serialize quantized layer kind {kind!r}")


def deserialize_model(blob: bytes, base_offset: int = 0):
    """Inverse of `serialize_model`; strict, offsets reported on failure."""
    r = _Reader(blob, base=base_offset)
    at = r.offset
    if r._take(4) != _MAGIC:
        raise ParseError("bad magic, not a model blob", at)
    at = r.offset
    ver = r.u16()
    if ver != _FORMAT_VERSION:
        raise ParseError(f"unsupported format version {ver}", at)
    at = r.offset
    mode_code = r.u8()
    if mode_code not in _CODE_MODES:
        raise ParseError(f"unknown mode code {mode_code}", at)
    precision = _CODE_MODES[mode_code]

    input_shape = _read_dims(r)
    at = r.offset
    n_labels = r.u32()
    if n_labels == 0 or n_labels > 4096:
        raise ParseError(f"implausible label count {n_labels}", at)
    labels = [r.text() for _ in range(n_labels)]

    act_params = []
    if precision == PRECISION_INT8_STATIC:
        sites_at = r.offset
        n_sites = r.u32()
        for _ in range(n_sites):
            scale = r.f32()
            zp = r.i32()
            try:
                act_params.append(
                    QuantizationParams(scale=scale, zero_point=zp, scheme=ASYMMETRIC)
                )
            except ValueError as e:
                raise ParseError(f"invalid activation params: {e}", sites_at) from None

    layers_at = r.offset
    n_layers = r.u32()
    if n_layers > 4096:
        raise ParseError(f"implausible layer count {n_layers}", layers_at)
    if precision == PRECISION_INT8_STATIC and len(act_params) != n_layers + 1:
        raise ParseError(
            f"{len(act_params)} activation params for {n_layers} layers", layers_at
        )

    if precision == PRECISION_FP32:
        layers = [_read_fp32_layer(r) for _ in range(n_layers)]
        if not r.done():
            raise ParseError("trailing data after last layer", r.offset)
        try:
            model = ModelGraph(
                layers=layers, input_shape=input_shape, labels=list(labels)
            )
        except ValueError as e:
            raise ParseError(f"blob decodes to an invalid graph: {e}", layers_at) from None
        return model

    entries = [_read_quantized_layer(r) for _ in range(n_layers)]
    if not r.done():
        raise ParseError("trailing data after last layer", r.offset)
    mode = STATIC if precision == PRECISION_INT8_STATIC else DYNAMIC
    try:
        return QuantizedModel(
            layers=entries,
            input_shape=input_shape,
            labels=list(labels),
            mode=mode,
            activation_params=act_params,
        )
    except ValueError as e:
        raise ParseError(f"blob decodes to an invalid graph: {e}", layers_at) from None


def _read_fp32_layer(r: _Reader):
    at = r.offset
    tag = r.u8()
    try:
        if tag == _TAG_DENSE:
            weights = _read_tensor(r, _KIND_F32)
            bias = _read_tensor(r, _KIND_F32)
            return Dense(weights=weights, bias=bias)
        if tag == _TAG_CONV2D:
            stride = r.u32()
            padding = r.u32()
            kernels = _read_tensor(r, _KIND_F32)
            bias = _read_tensor(r, _KIND_F32)
            return Conv2D(kernels=kernels, bias=bias, stride=stride, padding=padding)
        if tag == _TAG_RELU:
            return ReLU()
        if tag == _TAG_MAXPOOL2D:
            return MaxPool2D(window=r.u32())
        if tag == _TAG_FLATTEN:
            return Flatten()
        if tag == _TAG_SOFTMAX:
            return Softmax()
    except ParseError:
        raise
    except ValueError as e:
        raise ParseError(f"invalid layer record: {e}", at) from None
    raise ParseError(f"unknown layer tag {tag}", at)


def _read_quantized_layer(r: _Reader) -> tuple:
    at = r.offset
    tag = r.u8()
    try:
        if tag == _TAG_DENSE:
            qt = _read_tensor(r, _KIND_INT8)
            bias_q, bias_scale = _read_tensor(r, _KIND_I32)
            return ("dense", QLinear(weights=qt, bias_q=bias_q, bias_scale=bias_scale))
        if tag == _TAG_CONV2D:
            stride = r.u32()
            padding = r.u32()
            qt = _read_tensor(r, _KIND_INT8)
            bias_q, bias_scale = _read_tensor(r, _KIND_I32)
            qlin = QLinear(weights=qt, bias_q=bias_q, bias_scale=bias_scale)
            return ("conv2d", qlin, stride, padding)
        if tag == _TAG_RELU:
            return ("relu",)
        if tag == _TAG_MAXPOOL2D:
            return ("maxpool2d", r.u32())
        if tag == _TAG_FLATTEN:
            return ("flatten",)
        if tag == _TAG_SOFTMAX:
            return ("softmax",)
    except ParseError:
        raise
    except ValueError as e:
        raise ParseError(f"invalid layer record: {e}", at) from None
    raise ParseError(f"unknown layer tag {tag}", at)


# ---------------------------------------------------------------------------
# Bundle assembly
# ---------------------------------------------------------------------------


def _model_precision(model) -> str:
    if isinstance(model, ModelGraph):
        return PRECISION_FP32
    if isinstance(model, QuantizedModel):
        return PRECISION_INT8_STATIC if model.mode == STATIC else PRECISION_INT8_DYNAMIC
    raise TypeError(f"cannot pack {type(model).__name__}")


def pack(
    model,
    *,
    name: str,
    version: str,
    condition_map: dict,
    confidence_floor: float = 0.5,
    created_at: str | None = None,
) -> ArtifactBundle:
    """Serialize a model into a checksummed, manifest-described bundle."""
    precision = _model_precision(model)
    if isinstance(model, ModelGraph):
        model.validate()
    blob = serialize_model(model)
    manifest = ArtifactManifest(
        name=name,
        version=version,
        precision=precision,
        input_shape=tuple(model.input_shape),
        labels=tuple(model.labels),
        condition_map=dict(condition_map),
        checksum=blob_checksum(blob),
        created_at=created_at if created_at is not None else utc_now_iso(),
        byte_size=len(blob),
        confidence_floor=confidence_floor,
    )
    return ArtifactBundle(manifest=manifest, blob=blob)


def read_envelope(data: bytes) -> tuple[ArtifactManifest, bytes]:
    """Split bundle bytes into (manifest, blob), verifying the checksum.

    Cheap enough for the registry's upload path: no model is built.
    """
    if len(data) < 4:
        raise ParseError("bundle shorter than its length prefix", 0)
    (mlen,) = struct.unpack("<I", data[:4])
    if 4 + mlen > len(data):
        raise ParseError(f"manifest length {mlen} exceeds bundle size", 4)
    try:
        mtext = data[4 : 4 + mlen].decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("manifest is not valid UTF-8", 4) from None
    try:
        manifest = ArtifactManifest.from_json(mtext)
    except ManifestError as e:
        raise ParseError(str(e), 4) from None
    blob = data[4 + mlen :]
    if blob_checksum(blob) != manifest.checksum:
        raise IntegrityError("weights blob fails checksum verification")
    if len(blob) != manifest.byte_size:
        raise IntegrityError(
            f"blob is {len(blob)} bytes, manifest says {manifest.byte_size}"
        )
    return manifest, blob


def unpack(data: bytes):
    """Inverse of `pack().to_bytes()`: checksum first, then deserialize."""
    manifest, blob = read_envelope(data)
    model = deserialize_model(blob, base_offset=4 + len(manifest.to_json().encode("utf-8")))
    if _model_precision(model) != manifest.precision:
        raise IntegrityError(
            f"blob precision {_model_precision(model)} != manifest {manifest.precision}"
        )
    if tuple(model.input_shape) != manifest.input_shape:
        raise IntegrityError("blob input shape disagrees with manifest")
    if tuple(model.labels) != manifest.labels:
        raise IntegrityError("blob labels disagree with manifest")
    return manifest, model
