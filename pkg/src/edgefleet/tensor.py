"""Minimal deterministic fp32 tensor math and layered model graphs.

Tensors are plain ``numpy.ndarray`` values with dtype float32 in row-major
(C) order.  All forward kernels are bit-reproducible: multiply-accumulate
runs in fp64 (products of fp32 operands are exact there), accumulates as a
strict ascending-index fold, and rounds to fp32 once at the end.  A naive
triple loop performing the same fp64 operation sequence produces identical
bits, which the test suite checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


@dataclass
class OpCounters:
    """Deterministic cost proxies accumulated during a forward pass."""

    float_mul_adds: int = 0
    int_mul_adds: int = 0
    range_scans: int = 0

    def snapshot(self) -> dict:
        return {
            "float_mul_adds": self.float_mul_adds,
            "int_mul_adds": self.int_mul_adds,
            "range_scans": self.range_scans,
        }


def as_f32(values, shape=None) -> np.ndarray:
    """Coerce to a float32 C-order array, optionally reshaping."""
    arr = np.asarray(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    return np.ascontiguousarray(arr)


def _ordered_dot(rows_f64: np.ndarray, vec_f64: np.ndarray) -> np.ndarray:
    # Strict left fold: ufunc.accumulate is defined as r[i] = r[i-1] + x[i],
    # so the summation order is ascending by construction.
    prod = rows_f64 * vec_f64
    return np.add.accumulate(prod, axis=-1)[..., -1]


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


@dataclass
class Dense:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        self.weights = as_f32(self.weights)
        self.bias = as_f32(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError(
                f"dense expects 2-D weights and 1-D bias, got {self.weights.shape} / {self.bias.shape}"
            )
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"dense weights {self.weights.shape} inconsistent with bias {self.bias.shape}"
            )

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.weights.shape[1],):
            raise ShapeError(
                f"dense expects input {(self.weights.shape[1],)}, got {tuple(input_shape)}"
            )
        return (self.weights.shape[0],)


@dataclass
class Conv2D:
    kernels: np.ndarray  # [outC, inC, kH, kW]
    bias: np.ndarray  # [outC]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.kernels = as_f32(self.kernels)
        self.bias = as_f32(self.bias)
        if self.kernels.ndim != 4 or self.bias.ndim != 1:
            raise ShapeError(
                f"conv2d expects 4-D kernels and 1-D bias, got {self.kernels.shape} / {self.bias.shape}"
            )
        if self.kernels.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"conv2d kernels {self.kernels.shape} inconsistent with bias {self.bias.shape}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {self.stride}/{self.padding}")

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.kernels.shape[1]:
            raise ShapeError(
                f"conv2d expects input [inC={self.kernels.shape[1]}, H, W], got {tuple(input_shape)}"
            )
        _, kh, kw = self.kernels.shape[1:]
        _, h, w = input_shape
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv2d output {oh}x{ow} < 1 for input {tuple(input_shape)}, "
                f"kernel {kh}x{kw}, stride {self.stride}, padding {self.padding}"
            )
        return (self.kernels.shape[0], oh, ow)


@dataclass
class ReLU:
    def output_shape(self, input_shape):
        return tuple(input_shape)


@dataclass
class MaxPool2D:
    window: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ShapeError(f"maxpool window must be >= 1, got {self.window}")

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool expects [C, H, W], got {tuple(input_shape)}")
        c, h, w = input_shape
        oh, ow = h // self.window, w // self.window
        if oh < 1 or ow < 1:
            raise ShapeError(f"maxpool output {oh}x{ow} < 1 for input {tuple(input_shape)}")
        return (c, oh, ow)


@dataclass
class Flatten:
    def output_shape(self, input_shape):
        n = 1
        for d in input_shape:
            n *= d
        return (n,)


@dataclass
class Softmax:
    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"softmax expects a 1-D input, got {tuple(input_shape)}")
        return tuple(input_shape)


Layer = Union[Dense, Conv2D, ReLU, MaxPool2D, Flatten, Softmax]

LAYER_NAMES = {
    Dense: "dense",
    Conv2D: "conv2d",
    ReLU: "relu",
    MaxPool2D: "maxpool2d",
    Flatten: "flatten",
    Softmax: "softmax",
}


@dataclass
class ModelGraph:
    """An ordered layer stack plus its input shape and class labels."""

    layers: list
    input_shape: tuple
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.labels = list(self.labels)
        self.validate()

    def validate(self):
        if any(d < 1 for d in self.input_shape):
            raise ShapeError(f"input shape must be positive, got {self.input_shape}")
        if not self.labels:
            raise ShapeError("model needs at least one label")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ShapeError(f"softmax at layer {i} must be the final layer")
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({LAYER_NAMES[type(layer)]}): {e}") from None
        if shape != (len(self.labels),):
            raise ShapeError(
                f"final output shape {shape} does not match {len(self.labels)} labels"
            )

    def activation_shapes(self) -> list:
        """Shapes at every activation site: the input plus each layer output."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def parameter_count(self) -> int:
        n = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                n += layer.weights.size + layer.bias.size
            elif isinstance(layer, Conv2D):
                n += layer.kernels.size + layer.bias.size
        return n


# ---------------------------------------------------------------------------
# Forward kernels
# ---------------------------------------------------------------------------


def dense_forward(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """y[i] = sum_j W[i,j] * x[j] + b[i], ascending j, one fp32 rounding."""
    if x.shape != (weights.shape[1],):
        raise ShapeError(f"dense input {x.shape} does not match weights {weights.shape}")
    acc = _ordered_dot(weights.astype(np.float64), x.astype(np.float64))
    acc = acc + bias.astype(np.float64)
    if counters is not None:
        counters.float_mul_adds += weights.shape[0] * weights.shape[1]
    return acc.astype(np.float32)


def conv2d_forward(
    layer: Conv2D, x: np.ndarray, counters: OpCounters | None = None
) -> np.ndarray:
    """Cross-correlation with zero padding; patch scan order is (inC, kH, kW)."""
    out_c, oh, ow = layer.output_shape(x.shape)
    in_c, kh, kw = layer.kernels.shape[1:]
    p, s = layer.padding, layer.stride

    xp = np.zeros((in_c, x.shape[1] + 2 * p, x.shape[2] + 2 * p), dtype=np.float64)
    xp[:, p : p + x.shape[1], p : p + x.shape[2]] = x
    # [inC, H', W', kH, kW] -> [H'*W', inC*kH*kW] keeps ascending (ic, ky, kx)
    # order per patch, matching the reference loop.
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::s, ::s][:, :oh, :ow]
    patches = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, in_c * kh * kw)

    kflat = layer.kernels.astype(np.float64).reshape(out_c, in_c * kh * kw)
    acc = _ordered_dot(kflat[:, None, :], patches[None, :, :])
    acc = acc + layer.bias.astype(np.float64)[:, None]
    if counters is not None:
        counters.float_mul_adds += out_c * in_c * kh * kw * oh * ow
    return acc.reshape(out_c, oh, ow).astype(np.float32)


def maxpool2d_forward(layer: MaxPool2D, x: np.ndarray) -> np.ndarray:
    c, oh, ow = layer.output_shape(x.shape)
    w = layer.window
    cropped = x[:, : oh * w, : ow * w]
    return cropped.reshape(c, oh, w, ow, w).max(axis=(2, 4))


def softmax(x: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax; the normalizer is an ascending fold."""
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"softmax expects a nonempty 1-D tensor, got shape {x.shape}")
    x64 = x.astype(np.float64)
    e = np.exp(x64 - x64.max())
    return (e / np.add.accumulate(e)[-1]).astype(np.float32)


def argmax(x: np.ndarray) -> int:
    """Smallest index attaining the maximum."""
    if x.size < 1:
        raise ShapeError("argmax of an empty tensor")
    return int(np.argmax(x))


def forward_fp32(
    model: ModelGraph, x: np.ndarray, counters: OpCounters | None = None
) -> tuple[np.ndarray, OpCounters]:
    """Run the full fp32 graph. Deterministic: same input, same bits."""
    if counters is None:
        counters = OpCounters()
    if x.shape != model.input_shape:
        raise ShapeError(f"input {x.shape} does not match model input {model.input_shape}")
    out = as_f32(x)
    for i, layer in enumerate(model.layers):
        try:
            if isinstance(layer, Dense):
                out = dense_forward(layer.weights, layer.bias, out, counters)
            elif isinstance(layer, Conv2D):
                out = conv2d_forward(layer, out, counters)
            elif isinstance(layer, ReLU):
                out = np.maximum(out, np.float32(0.0))
            elif isinstance(layer, MaxPool2D):
                out = maxpool2d_forward(layer, out)
            elif isinstance(layer, Flatten):
                out = out.reshape(-1)
            elif isinstance(layer, Softmax):
                out = softmax(out)
            else:
                raise ShapeError(f"unknown layer type {type(layer).__name__}")
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({LAYER_NAMES.get(type(layer), '?')}): {e}") from None
    return out, counters


def analytic_float_mul_adds(model: ModelGraph) -> int:
    """Closed-form MAC count for one fp32 forward pass."""
    total = 0
    shape = model.input_shape
    for layer in model.layers:
        out_shape = layer.output_shape(shape)
        if isinstance(layer, Dense):
            total += layer.weights.shape[0] * layer.weights.shape[1]
        elif isinstance(layer, Conv2D):
            oc, oh, ow = out_shape
            _, ic, kh, kw = layer.kernels.shape
            total += oc * ic * kh * kw * oh * ow
        shape = out_shape
    return total
