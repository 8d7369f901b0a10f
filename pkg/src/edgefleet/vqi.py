"""Visual quality inspection pipeline: image decode, pre/post-processing,
and mapping class predictions onto asset conditions.

Only binary PPM (P6) and PGM (P5) with maxval 255 are accepted; both are
dependency-free and bit-exact, which keeps the whole pipeline
reproducible. Decoded tensors are channel-major fp32 in [0, 255].
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .quantize import QuantizedModel, forward_quantized
from .tensor import OpCounters, ShapeError, argmax, as_f32, forward_fp32

OK = "OK"
DEGRADED = "DEGRADED"
CRITICAL = "CRITICAL"
UNKNOWN = "UNKNOWN"
CONDITIONS = (OK, DEGRADED, CRITICAL, UNKNOWN)
# UNKNOWN is reserved for low-confidence results, so maps may not assign it.
ASSIGNABLE_CONDITIONS = (OK, DEGRADED, CRITICAL)

DEFAULT_CONFIDENCE_FLOOR = 0.5

_WHITESPACE = b" \t\r\n"


class ImageFormatError(ValueError):
    """Raised for undecodable image bytes; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConditionMapError(ValueError):
    """Raised when a label has no condition mapping or the map is invalid."""


@dataclass(frozen=True)
class ClassPrediction:
    label: str
    class_index: int
    confidence: float
    probabilities: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", probs)
        if not probs:
            raise ShapeError("prediction needs a nonempty probability vector")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ShapeError(f"probabilities sum to {sum(probs)}, expected 1")
        if self.confidence != max(probs):
            raise ShapeError("confidence must equal the maximum probability")


@dataclass(frozen=True)
class AssetConditionUpdate:
    """One VQI verdict for one physical asset, as sent to the asset store."""

    asset_id: str
    condition: str
    confidence: float
    model_version: str
    device_id: str
    timestamp: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ConditionMapError(f"unknown condition {self.condition!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ConditionMapError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "condition": self.condition,
            "confidence": self.confidence,
            "model_version": self.model_version,
            "device_id": self.device_id,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AssetConditionUpdate":
        return cls(
            asset_id=str(doc["asset_id"]),
            condition=str(doc["condition"]),
            confidence=float(doc["confidence"]),
            model_version=str(doc["model_version"]),
            device_id=str(doc["device_id"]),
            timestamp=str(doc["timestamp"]),
        )


# ---------------------------------------------------------------------------
# PPM / PGM codec
# ---------------------------------------------------------------------------


def _next_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    """Skip whitespace and # comments, return (token, start, end)."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in _WHITESPACE:
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ImageFormatError("unterminated header comment", pos)
            pos = nl + 1
        else:
            break
    if pos >= n:
        raise ImageFormatError("unexpected end of header", pos)
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE:
        pos += 1
    return data[start:pos], start, pos


def _header_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    token, start, end = _next_token(data, pos)
    if not token.isdigit():
        raise ImageFormatError(f"{what} is not a decimal integer", start)
    value = int(token)
    if value > 1_000_000_000:
        raise ImageFormatError(f"{what} {value} overflows sane bounds", start)
    return value, end


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary P6 (3 channels) or P5 (1 channel) with maxval 255.

    Returns a channel-major fp32 tensor with values in [0, 255].
    """
    magic = data[:2]
    if magic in (b"P3", b"P2"):
        raise ImageFormatError("ASCII PPM/PGM is not supported, use P6/P5", 0)
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError("not a binary PPM (P6) or PGM (P5) file", 0)
    channels = 3 if magic == b"P6" else 1

    width, pos = _header_int(data, 2, "width")
    height, pos = _header_int(data, pos, "height")
    if width < 1 or height < 1:
        raise ImageFormatError(f"degenerate image size {width}x{height}", 2)
    maxval, pos = _header_int(data, pos, "maxval")
    if maxval != 255:
        raise ImageFormatError(f"maxval must be 255, got {maxval}", pos)
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise ImageFormatError("missing whitespace before pixel data", pos)
    pixel_start = pos + 1

    need = width * height * channels
    have = len(data) - pixel_start
    if have < need:
        raise ImageFormatError(
            f"truncated pixel data: need {need} bytes, have {have}", len(data)
        )
    if have > need:
        raise ImageFormatError("trailing bytes after pixel data", pixel_start + need)

    flat = np.frombuffer(data, dtype=np.uint8, count=need, offset=pixel_start)
    if channels == 3:
        img = flat.reshape(height, width, 3).transpose(2, 0, 1)
    else:
        img = flat.reshape(1, height, width)
    return img.astype(np.float32)


def encode_ppm(image: np.ndarray) -> bytes:
    """Canonical P6/P5 bytes for a [3,H,W] or [1,H,W] tensor in [0, 255]."""
    image = as_f32(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError(f"expected [1|3, H, W] image, got shape {image.shape}")
    channels, height, width = image.shape
    magic = b"P6" if channels == 3 else b"P5"
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    if channels == 3:
        body = pixels.transpose(1, 2, 0).tobytes()
    else:
        body = pixels[0].tobytes()
    return magic + b"\n%d %d\n255\n" % (width, height) + body


# ---------------------------------------------------------------------------
# Pre/post-processing
# ---------------------------------------------------------------------------


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    # index i of the output samples source pixel floor(i * src / dst)
    return (np.arange(dst) * src) // dst


def preprocess(image: np.ndarray, input_shape: tuple) -> np.ndarray:
    """Fit a decoded image to a model input: resize, channel-fold, scale.

    Nearest-neighbor resize to the target H x W, channel mean when the
    model expects 1 channel (replication when it expects 3 from gray),
    then scale into [0, 1]. Scaling is skipped when the values are
    already in [0, 1], which makes the whole step idempotent.
    """
    image = as_f32(image)
    if image.ndim != 3:
        raise ShapeError(f"expected a [C, H, W] image, got shape {image.shape}")
    if len(input_shape) != 3:
        raise ShapeError(f"target shape must be [C, H, W], got {input_shape}")
    tc, th, tw = (int(d) for d in input_shape)
    if tc < 1 or th < 1 or tw < 1:
        raise ShapeError(f"target shape must be positive, got {input_shape}")
    sc, sh, sw = image.shape

    if (sh, sw) != (th, tw):
        rows = _nearest_indices(sh, th)
        cols = _nearest_indices(sw, tw)
        image = image[:, rows][:, :, cols]

    if tc != sc:
        if tc == 1:
            image = image.mean(axis=0, keepdims=True).astype(np.float32)
        elif tc == 3 and sc == 1:
            image = np.repeat(image, 3, axis=0)
        else:
            raise ShapeError(f"cannot map {sc} channels onto {tc}")

    if float(image.max(initial=0.0)) > 1.0:
        image = (image / np.float32(255.0)).astype(np.float32)
    return image


def postprocess(probabilities: np.ndarray, labels) -> ClassPrediction:
    """Argmax with lowest-index tie-break; confidence is the max probability."""
    probs = as_f32(probabilities)
    labels = list(labels)
    if probs.ndim != 1 or probs.size != len(labels):
        raise ShapeError(
            f"{probs.shape} probabilities do not match {len(labels)} labels"
        )
    idx = argmax(probs)
    return ClassPrediction(
        label=labels[idx],
        class_index=idx,
        confidence=float(probs[idx]),
        probabilities=tuple(float(p) for p in probs),
    )


def map_condition(
    prediction: ClassPrediction,
    condition_map: dict,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> str:
    """condition_map[label] when confident enough, otherwise UNKNOWN."""
    if prediction.label not in condition_map:
        raise ConditionMapError(f"label {prediction.label!r} has no condition mapping")
    condition = condition_map[prediction.label]
    if condition not in ASSIGNABLE_CONDITIONS:
        raise ConditionMapError(
            f"condition_map assigns reserved condition {condition!r}"
        )
    if prediction.confidence < confidence_floor:
        return UNKNOWN
    return condition


def classify_image(model, manifest, image_bytes: bytes):
    """Full pipeline: decode -> preprocess -> forward -> postprocess -> map.

    `manifest` needs input_shape/labels/condition_map/confidence_floor/version
    attributes. Latency is wall clock around the forward call only. Returns
    (result dict with the local-inference response fields, OpCounters).
    """
    image = decode_ppm(image_bytes)
    x = preprocess(image, manifest.input_shape)
    counters = OpCounters()
    start = time.perf_counter()
    if isinstance(model, QuantizedModel):
        out, counters = forward_quantized(model, x, counters)
    else:
        out, counters = forward_fp32(model, x, counters)
    latency_ms = (time.perf_counter() - start) * 1000.0
    prediction = postprocess(out, manifest.labels)
    condition = map_condition(
        prediction, manifest.condition_map, manifest.confidence_floor
    )
    result = {
        "label": prediction.label,
        "confidence": prediction.confidence,
        "condition": condition,
        "model_version": manifest.version,
        "latency_ms": latency_ms,
    }
    return result, counters
