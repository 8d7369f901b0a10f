"""Post-training signed-int8 quantization.

Weights are quantized symmetrically per tensor (zero point pinned at 0,
clamp range [-127, 127]); activations asymmetrically (clamp [-128, 127],
range widened to include 0 so 0.0 is always exactly representable).
Rounding is half-to-even everywhere.  Static mode freezes activation
ranges from a calibration run; dynamic mode scans each live activation at
inference time, which costs one extra range pass per quantized layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ModelGraph,
    OpCounters,
    ReLU,
    ShapeError,
    Softmax,
    as_f32,
    conv2d_forward,
    dense_forward,
    maxpool2d_forward,
    softmax,
)

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"

_CLAMP = {SYMMETRIC: (-127, 127), ASYMMETRIC: (-128, 127)}


class InvalidDataError(ValueError):
    """Raised when NaN (or other unusable data) reaches a quantizer."""


class CalibrationError(ValueError):
    """Raised for empty calibration sets or missing site coverage."""


@dataclass(frozen=True)
class QuantizationParams:
    scale: float
    zero_point: int
    scheme: str

    def __post_init__(self):
        if self.scheme not in _CLAMP:
            raise InvalidDataError(f"unknown scheme {self.scheme!r}")
        if not (self.scale > 0.0):
            raise InvalidDataError(f"scale must be positive, got {self.scale}")
        if self.scheme == SYMMETRIC and self.zero_point != 0:
            raise InvalidDataError("symmetric scheme requires zero_point = 0")
        if not -128 <= self.zero_point <= 127:
            raise InvalidDataError(f"zero_point {self.zero_point} outside int8 range")

    @property
    def clamp_range(self) -> tuple[int, int]:
        return _CLAMP[self.scheme]


@dataclass
class QTensor:
    qdata: np.ndarray  # int8, row-major
    params: QuantizationParams

    def __post_init__(self):
        self.qdata = np.ascontiguousarray(self.qdata, dtype=np.int8)
        lo, hi = self.params.clamp_range
        if self.qdata.size and (self.qdata.min() < lo or self.qdata.max() > hi):
            raise InvalidDataError(
                f"qdata outside {self.params.scheme} clamp range [{lo}, {hi}]"
            )

    @property
    def shape(self) -> tuple:
        return self.qdata.shape


@dataclass
class CalibrationStats:
    """Running min/max per activation site (site 0 = the model input)."""

    site_min: list
    site_max: list
    sample_count: int = 0

    def observe(self, site: int, t: np.ndarray):
        self.site_min[site] = min(self.site_min[site], float(t.min()))
        self.site_max[site] = max(self.site_max[site], float(t.max()))

    def site_range(self, site: int) -> tuple[float, float]:
        lo, hi = self.site_min[site], self.site_max[site]
        if lo > hi:
            raise CalibrationError(f"no calibration data for activation site {site}")
        return lo, hi


def _reject_nan(t: np.ndarray):
    if np.isnan(t).any():
        raise InvalidDataError("tensor contains NaN")


def compute_params_symmetric(t: np.ndarray) -> QuantizationParams:
    """scale = max|t| / 127, zero point 0; all-zero input degenerates to scale 1."""
    t = as_f32(t)
    _reject_nan(t)
    peak = float(np.abs(t).max()) if t.size else 0.0
    scale = np.float32(peak / 127.0)
    if not scale > 0.0:  # all-zero input, or peak/127 underflowed in f32
        scale = np.float32(1.0)
    return QuantizationParams(scale=float(scale), zero_point=0, scheme=SYMMETRIC)


def compute_params_asymmetric(t: np.ndarray) -> QuantizationParams:
    """Range widened to include 0; zero point shifts the int8 grid onto it."""
    t = as_f32(t)
    _reject_nan(t)
    lo = min(float(t.min()) if t.size else 0.0, 0.0)
    hi = max(float(t.max()) if t.size else 0.0, 0.0)
    scale = np.float32((hi - lo) / 255.0) if hi > lo else np.float32(0.0)
    if not scale > 0.0:  # degenerate range, or (hi-lo)/255 underflowed in f32
        scale = np.float32(1.0)
    zp = int(np.clip(-128.0 - np.rint(np.float64(lo) / np.float64(scale)), -128, 127))
    return QuantizationParams(scale=float(scale), zero_point=zp, scheme=ASYMMETRIC)


def quantize(t: np.ndarray, p: QuantizationParams) -> QTensor:
    """q = clamp(round_half_even(t / scale) + zero_point); shape preserved."""
    t = as_f32(t)
    _reject_nan(t)
    lo, hi = p.clamp_range
    q = np.rint(t.astype(np.float64) / p.scale) + p.zero_point
    q = np.clip(q, lo, hi).astype(np.int8)
    return QTensor(qdata=q, params=p)


def dequantize(q: QTensor) -> np.ndarray:
    """x_hat = scale * (q - zero_point); shape preserved, zp maps to exactly 0."""
    return (
        np.float32(q.params.scale)
        * (q.qdata.astype(np.int32) - q.params.zero_point).astype(np.float32)
    ).astype(np.float32)


# ---------------------------------------------------------------------------
# Whole-model quantization
# ---------------------------------------------------------------------------

STATIC = "static"
DYNAMIC = "dynamic"


@dataclass
class QLinear:
    """Quantized weights plus int32 bias for one Dense/Conv2D layer."""

    weights: QTensor
    bias_q: np.ndarray  # int32
    bias_scale: float

    def __post_init__(self):
        self.bias_q = np.ascontiguousarray(self.bias_q, dtype=np.int32)


@dataclass
class QuantizedModel:
    """Source topology with int8 weights; fp32 weights are not retained."""

    layers: list  # Dense/Conv2D replaced by (layer-template, QLinear) pairs
    input_shape: tuple
    labels: list
    mode: str
    activation_params: list = field(default_factory=list)  # static: one per site

    def __post_init__(self):
        if self.mode not in (STATIC, DYNAMIC):
            raise InvalidDataError(f"unknown quantization mode {self.mode!r}")
        n_sites = len(self.layers) + 1
        if self.mode == STATIC and len(self.activation_params) != n_sites:
            raise CalibrationError(
                f"static model needs {n_sites} activation params, got {len(self.activation_params)}"
            )


def calibrate(model: ModelGraph, samples: list) -> CalibrationStats:
    """Record global min/max at every activation site over an fp32 run."""
    samples = list(samples)
    if not samples:
        raise CalibrationError("calibration needs at least one sample")
    n_sites = len(model.layers) + 1
    stats = CalibrationStats(
        site_min=[float("inf")] * n_sites, site_max=[float("-inf")] * n_sites
    )
    for x in samples:
        x = as_f32(x)
        if x.shape != model.input_shape:
            raise ShapeError(
                f"calibration sample {x.shape} does not match input {model.input_shape}"
            )
        out = x
        stats.observe(0, out)
        for i, layer in enumerate(model.layers):
            if isinstance(layer, Dense):
                out = dense_forward(layer.weights, layer.bias, out)
            elif isinstance(layer, Conv2D):
                out = conv2d_forward(layer, out)
            elif isinstance(layer, ReLU):
                out = np.maximum(out, np.float32(0.0))
            elif isinstance(layer, MaxPool2D):
                out = maxpool2d_forward(layer, out)
            elif isinstance(layer, Flatten):
                out = out.reshape(-1)
            elif isinstance(layer, Softmax):
                out = softmax(out)
            stats.observe(i + 1, out)
        stats.sample_count += 1
    return stats


def _quantize_linear(weights: np.ndarray, bias: np.ndarray, input_scale: float) -> QLinear:
    wp = compute_params_symmetric(weights)
    qw = quantize(weights, wp)
    bias_scale = np.float32(wp.scale) * np.float32(input_scale)
    bq = np.rint(bias.astype(np.float64) / float(bias_scale))
    bq = np.clip(bq, np.iinfo(np.int32).min, np.iinfo(np.int32).max).astype(np.int32)
    return QLinear(weights=qw, bias_q=bq, bias_scale=float(bias_scale))


def _params_from_range(lo: float, hi: float) -> QuantizationParams:
    span = np.zeros(2, dtype=np.float32)
    span[0], span[1] = lo, hi
    return compute_params_asymmetric(span)


def quantize_model_static(model: ModelGraph, stats: CalibrationStats) -> QuantizedModel:
    """Symmetric weights, asymmetric activations frozen from calibration."""
    n_sites = len(model.layers) + 1
    if len(stats.site_min) != n_sites:
        raise CalibrationError(
            f"stats cover {len(stats.site_min)} sites, model has {n_sites}"
        )
    if stats.sample_count < 1:
        raise CalibrationError("calibration stats are empty")
    act_params = [_params_from_range(*stats.site_range(i)) for i in range(n_sites)]
    layers = []
    for i, layer in enumerate(model.layers):
        in_scale = float(act_params[i].scale)
        if isinstance(layer, Dense):
            layers.append(("dense", _quantize_linear(layer.weights, layer.bias, in_scale)))
        elif isinstance(layer, Conv2D):
            q = _quantize_linear(layer.kernels, layer.bias, in_scale)
            layers.append(("conv2d", q, layer.stride, layer.padding))
        else:
            layers.append(_passthrough(layer))
    return QuantizedModel(
        layers=layers,
        input_shape=model.input_shape,
        labels=list(model.labels),
        mode=STATIC,
        activation_params=act_params,
    )


def quantize_model_dynamic(model: ModelGraph) -> QuantizedModel:
    """Symmetric weights only; activation ranges are scanned at runtime.

    Biases are frozen at bias_scale = weight_scale (no calibrated input
    scale exists), bounding their representation error by weight_scale/2.
    """
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            layers.append(("dense", _quantize_linear(layer.weights, layer.bias, 1.0)))
        elif isinstance(layer, Conv2D):
            q = _quantize_linear(layer.kernels, layer.bias, 1.0)
            layers.append(("conv2d", q, layer.stride, layer.padding))
        else:
            layers.append(_passthrough(layer))
    return QuantizedModel(
        layers=layers,
        input_shape=model.input_shape,
        labels=list(model.labels),
        mode=DYNAMIC,
    )


def _passthrough(layer):
    if isinstance(layer, ReLU):
        return ("relu",)
    if isinstance(layer, MaxPool2D):
        return ("maxpool2d", layer.window)
    if isinstance(layer, Flatten):
        return ("flatten",)
    if isinstance(layer, Softmax):
        return ("softmax",)
    raise ShapeError(f"cannot quantize layer type {type(layer).__name__}")


def _int_accumulate(qw_flat: np.ndarray, x_centered: np.ndarray) -> np.ndarray:
    # int8 x int8 -> int32 accumulation, done exactly in int64 (order-free).
    return qw_flat.astype(np.int64) @ x_centered.astype(np.int64)


def forward_quantized(
    qm: QuantizedModel, x: np.ndarray, counters: OpCounters | None = None
) -> tuple[np.ndarray, OpCounters]:
    """Quantized forward pass; inputs and outputs stay fp32 at the boundary.

    Dense/Conv2D run as integer multiply-accumulates over (q_x - z_x) with
    symmetric weights (z_w = 0), then dequantize via
    y = w_scale * x_scale * acc + bias_q * bias_scale.  ReLU/MaxPool/Softmax
    operate on the dequantized fp32 values between linear layers.
    """
    if counters is None:
        counters = OpCounters()
    x = as_f32(x)
    if x.shape != qm.input_shape:
        raise ShapeError(f"input {x.shape} does not match model input {qm.input_shape}")

    def input_params(site: int, live: np.ndarray) -> QuantizationParams:
        if qm.mode == STATIC:
            return qm.activation_params[site]
        counters.range_scans += 1
        return compute_params_asymmetric(live)

    out = x
    for site, entry in enumerate(qm.layers):
        kind = entry[0]
        if kind == "dense":
            qlin: QLinear = entry[1]
            p = input_params(site, out)
            qx = quantize(out, p)
            centered = qx.qdata.astype(np.int32) - p.zero_point
            acc = _int_accumulate(qlin.weights.qdata, centered)
            n_out, n_in = qlin.weights.shape
            counters.int_mul_adds += n_out * n_in
            out = (
                np.float32(qlin.weights.params.scale) * np.float32(p.scale) * acc
                + qlin.bias_q.astype(np.float64) * qlin.bias_scale
            ).astype(np.float32)
        elif kind == "conv2d":
            qlin, stride, padding = entry[1], entry[2], entry[3]
            p = input_params(site, out)
            qx = quantize(out, p)
            out = _conv2d_quantized(qlin, qx, p, stride, padding, counters)
        elif kind == "relu":
            out = np.maximum(out, np.float32(0.0))
        elif kind == "maxpool2d":
            out = maxpool2d_forward(MaxPool2D(window=entry[1]), out)
        elif kind == "flatten":
            out = out.reshape(-1)
        elif kind == "softmax":
            out = softmax(out)
        else:
            raise ShapeError(f"unknown quantized layer kind {kind!r}")
    return out, counters


def _conv2d_quantized(
    qlin: QLinear,
    qx: QTensor,
    p: QuantizationParams,
    stride: int,
    padding: int,
    counters: OpCounters,
) -> np.ndarray:
    out_c, in_c, kh, kw = qlin.weights.shape
    _, h, w = qx.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output {oh}x{ow} < 1")

    # Zero padding in the quantized domain pads with the zero point, so the
    # centered activation is 0 there, exactly like fp32 zero padding.
    centered = np.full(
        (in_c, h + 2 * padding, w + 2 * padding), 0, dtype=np.int64
    )
    centered[:, padding : padding + h, padding : padding + w] = (
        qx.qdata.astype(np.int64) - p.zero_point
    )
    win = np.lib.stride_tricks.sliding_window_view(centered, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    patches = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, in_c * kh * kw)
    kflat = qlin.weights.qdata.reshape(out_c, in_c * kh * kw).astype(np.int64)
    acc = kflat @ patches.T  # [outC, oh*ow]
    counters.int_mul_adds += out_c * in_c * kh * kw * oh * ow
    out = (
        np.float32(qlin.weights.params.scale) * np.float32(p.scale) * acc
        + (qlin.bias_q.astype(np.float64) * qlin.bias_scale)[:, None]
    )
    return out.reshape(out_c, oh, ow).astype(np.float32)


def size_report(fp32_bytes: int, q_bytes: int) -> float:
    """Exact fp32/quantized size ratio."""
    if fp32_bytes <= 0 or q_bytes <= 0:
        raise InvalidDataError("size_report needs positive byte counts")
    return fp32_bytes / q_bytes
