"""int8 quantization: parameter rules, round-trips, integer forward math."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edgefleet.quantize import (
    ASYMMETRIC,
    DYNAMIC,
    STATIC,
    SYMMETRIC,
    CalibrationError,
    CalibrationStats,
    InvalidDataError,
    QLinear,
    QTensor,
    QuantizationParams,
    QuantizedModel,
    calibrate,
    compute_params_asymmetric,
    compute_params_symmetric,
    dequantize,
    forward_quantized,
    quantize,
    quantize_model_dynamic,
    quantize_model_static,
    size_report,
)
from edgefleet.tensor import (
    Dense,
    ModelGraph,
    OpCounters,
    ReLU,
    ShapeError,
    Softmax,
    as_f32,
    forward_fp32,
)
from edgefleet.toydata import images_to_inputs


def asym_params(scale, zp):
    return QuantizationParams(scale=scale, zero_point=zp, scheme=ASYMMETRIC)


def sym_params(scale):
    return QuantizationParams(scale=scale, zero_point=0, scheme=SYMMETRIC)


# ---------------------------------------------------------------------------
# Parameter computation
# ---------------------------------------------------------------------------


def test_symmetric_params_known_answer():
    p = compute_params_symmetric(as_f32([-2.0, 1.0, 0.5]))
    assert p.scheme == SYMMETRIC
    assert p.zero_point == 0
    assert p.scale == pytest.approx(2.0 / 127.0, rel=1e-6)


def test_asymmetric_params_known_answer():
    p = compute_params_asymmetric(as_f32([-1.0, 3.0]))
    assert p.scheme == ASYMMETRIC
    assert p.scale == pytest.approx(4.0 / 255.0, rel=1e-6)
    # zero_point = clip(-128 - round(lo/scale)) = -128 - round(-63.75) = -64
    assert p.zero_point == -64


def test_asymmetric_range_always_includes_zero():
    # all-positive data still gets a grid point at exactly 0
    p = compute_params_asymmetric(as_f32([2.0, 4.0]))
    assert p.scale == pytest.approx(4.0 / 255.0, rel=1e-6)
    assert p.zero_point == -128
    z = dequantize(quantize(as_f32([0.0]), p))
    assert z.tolist() == [0.0]


def test_all_zero_tensor_degenerates_to_unit_scale():
    ps = compute_params_symmetric(np.zeros(4, dtype=np.float32))
    assert ps.scale == 1.0 and ps.zero_point == 0
    pa = compute_params_asymmetric(np.zeros(4, dtype=np.float32))
    assert pa.scale == 1.0 and pa.zero_point == -128
    assert dequantize(quantize(np.zeros(4), pa)).tolist() == [0.0] * 4


def test_empty_tensor_degenerates_to_unit_scale():
    assert compute_params_symmetric(np.zeros(0)).scale == 1.0
    assert compute_params_asymmetric(np.zeros(0)).scale == 1.0


def test_subnormal_range_does_not_underflow_scale():
    # values so small that range/255 underflows to 0 in f32; the scale must
    # fall back to 1.0 instead of going degenerate
    tiny = np.array([0.0, 1e-45], dtype=np.float32)
    for p in (compute_params_symmetric(tiny), compute_params_asymmetric(tiny)):
        assert p.scale == 1.0
        err = np.abs(dequantize(quantize(tiny, p)) - tiny)
        assert float(err.max()) <= p.scale / 2.0


def test_nan_rejected_everywhere():
    bad = as_f32([1.0, float("nan")])
    with pytest.raises(InvalidDataError, match="NaN"):
        compute_params_symmetric(bad)
    with pytest.raises(InvalidDataError, match="NaN"):
        compute_params_asymmetric(bad)
    with pytest.raises(InvalidDataError, match="NaN"):
        quantize(bad, sym_params(1.0))


def test_params_validation():
    with pytest.raises(InvalidDataError, match="scheme"):
        QuantizationParams(scale=1.0, zero_point=0, scheme="per-channel")
    with pytest.raises(InvalidDataError, match="positive"):
        QuantizationParams(scale=0.0, zero_point=0, scheme=SYMMETRIC)
    with pytest.raises(InvalidDataError, match="zero_point"):
        QuantizationParams(scale=1.0, zero_point=3, scheme=SYMMETRIC)
    with pytest.raises(InvalidDataError, match="int8"):
        QuantizationParams(scale=1.0, zero_point=200, scheme=ASYMMETRIC)


def test_qtensor_clamp_range_validation():
    # -128 is reserved under the symmetric scheme
    with pytest.raises(InvalidDataError, match="clamp range"):
        QTensor(qdata=np.array([-128], dtype=np.int8), params=sym_params(1.0))
    QTensor(qdata=np.array([-128], dtype=np.int8), params=asym_params(1.0, 0))


# ---------------------------------------------------------------------------
# Quantize / dequantize
# ---------------------------------------------------------------------------


def test_round_half_to_even():
    q = quantize(as_f32([0.5, 1.5, 2.5, 3.5, -0.5, -2.5]), sym_params(1.0))
    assert q.qdata.tolist() == [0, 2, 2, 4, 0, -2]


def test_quantize_clamps_to_scheme_range():
    assert quantize(as_f32([300.0, -300.0]), sym_params(1.0)).qdata.tolist() == [127, -127]
    assert quantize(as_f32([-200.0]), asym_params(1.0, 0)).qdata.tolist() == [-128]


def test_dequantize_known_answer():
    scale = float(np.float32(2.0 / 127.0))
    q = QTensor(np.array([-127, 64, 32], dtype=np.int8), sym_params(scale))
    x = dequantize(q)
    assert x[0] == pytest.approx(-2.0, rel=1e-6)
    assert x[1] == pytest.approx(64 * scale, rel=1e-7)
    assert x[2] == pytest.approx(32 * scale, rel=1e-7)


def test_zero_point_maps_to_exact_zero():
    p = asym_params(0.037, -19)
    q = QTensor(np.array([-19], dtype=np.int8), p)
    assert dequantize(q).tolist() == [0.0]


def test_dequantize_preserves_shape():
    p = sym_params(0.5)
    q = quantize(np.ones((2, 3, 4), dtype=np.float32), p)
    assert dequantize(q).shape == (2, 3, 4)


@pytest.mark.parametrize("scheme,lo,hi", [(SYMMETRIC, -127, 127), (ASYMMETRIC, -128, 127)])
def test_exhaustive_codes_round_trip_exactly(scheme, lo, hi):
    """quantize(dequantize(q)) == q for every representable int8 code."""
    for scale in (1.0, 0.0123, float(np.float32(2.0 / 127.0)), 17.5):
        for zp in ((0,) if scheme == SYMMETRIC else (-128, -1, 0, 63, 127)):
            p = QuantizationParams(scale=scale, zero_point=zp, scheme=scheme)
            codes = np.arange(lo, hi + 1, dtype=np.int8)
            x = dequantize(QTensor(codes, p))
            back = quantize(x, p)
            assert back.qdata.tolist() == codes.tolist()


@settings(max_examples=120, deadline=None)
@given(
    hnp.arrays(
        np.float32,
        st.integers(1, 40),
        elements=st.floats(-1e4, 1e4, width=32, allow_nan=False),
    )
)
def test_round_trip_error_within_half_scale_symmetric(t):
    p = compute_params_symmetric(t)
    err = np.abs(dequantize(quantize(t, p)).astype(np.float64) - t.astype(np.float64))
    assert float(err.max()) <= p.scale / 2.0


@settings(max_examples=120, deadline=None)
@given(
    hnp.arrays(
        np.float32,
        st.integers(1, 40),
        elements=st.floats(-1e4, 1e4, width=32, allow_nan=False),
    )
)
def test_round_trip_error_within_half_scale_asymmetric(t):
    p = compute_params_asymmetric(t)
    err = np.abs(dequantize(quantize(t, p)).astype(np.float64) - t.astype(np.float64))
    assert float(err.max()) <= p.scale / 2.0


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def relu_model():
    return ModelGraph(layers=[ReLU()], input_shape=(2,), labels=["a", "b"])


def test_calibrate_tracks_min_max_per_site():
    stats = calibrate(relu_model(), [as_f32([-1.0, 2.0]), as_f32([3.0, -4.0])])
    assert stats.sample_count == 2
    assert stats.site_range(0) == (-4.0, 3.0)
    assert stats.site_range(1) == (0.0, 3.0)  # post-ReLU floor at 0


def test_calibrate_rejects_empty_and_mismatched():
    with pytest.raises(CalibrationError, match="at least one"):
        calibrate(relu_model(), [])
    with pytest.raises(ShapeError, match="does not match input"):
        calibrate(relu_model(), [as_f32([1.0, 2.0, 3.0])])


def test_uncovered_site_raises():
    stats = CalibrationStats(
        site_min=[float("inf")] * 2, site_max=[float("-inf")] * 2, sample_count=1
    )
    with pytest.raises(CalibrationError, match="site 0"):
        stats.site_range(0)


def test_static_quantization_validates_stats():
    model = relu_model()
    good = calibrate(model, [as_f32([1.0, -1.0])])
    bad_sites = CalibrationStats(site_min=[0.0] * 5, site_max=[1.0] * 5, sample_count=1)
    with pytest.raises(CalibrationError, match="sites"):
        quantize_model_static(model, bad_sites)
    empty = CalibrationStats(
        site_min=good.site_min, site_max=good.site_max, sample_count=0
    )
    with pytest.raises(CalibrationError, match="empty"):
        quantize_model_static(model, empty)


def test_quantized_model_validation():
    with pytest.raises(InvalidDataError, match="mode"):
        QuantizedModel(layers=[], input_shape=(2,), labels=["a"], mode="int4")
    with pytest.raises(CalibrationError, match="activation params"):
        QuantizedModel(
            layers=[("relu",)], input_shape=(2,), labels=["a"], mode=STATIC,
            activation_params=[],
        )


# ---------------------------------------------------------------------------
# Quantized forward: exact integer known answers
# ---------------------------------------------------------------------------


def unit_scale_dense_model(bias_q, bias_scale):
    """One dense layer where every scale is 1.0, so the math is pure ints."""
    qw = QTensor(np.array([[3, -2], [5, 7]], dtype=np.int8), sym_params(1.0))
    qlin = QLinear(weights=qw, bias_q=np.asarray(bias_q), bias_scale=bias_scale)
    site = asym_params(1.0, 0)
    return QuantizedModel(
        layers=[("dense", qlin)],
        input_shape=(2,),
        labels=["a", "b"],
        mode=STATIC,
        activation_params=[site, site],
    )


def test_quantized_dense_integer_known_answer():
    qm = unit_scale_dense_model(bias_q=[0, 0], bias_scale=1.0)
    out, counters = forward_quantized(qm, as_f32([10.0, -20.0]))
    # acc = [3*10 + (-2)(-20), 5*10 + 7*(-20)] = [70, -90]
    assert out.tolist() == [70.0, -90.0]
    assert counters.int_mul_adds == 4
    assert counters.float_mul_adds == 0
    assert counters.range_scans == 0  # static: stored params, no live scan


def test_quantized_dense_bias_application():
    qm = unit_scale_dense_model(bias_q=[5, -3], bias_scale=2.0)
    out, _ = forward_quantized(qm, as_f32([10.0, -20.0]))
    # y = acc + bias_q * bias_scale = [70 + 10, -90 - 6]
    assert out.tolist() == [80.0, -96.0]


def test_static_params_are_frozen_dynamic_adapts():
    ident = ModelGraph(
        layers=[Dense(np.eye(1), np.zeros(1))], input_shape=(1,), labels=["a"]
    )
    stats = calibrate(ident, [as_f32([-1.0]), as_f32([1.0])])
    static = quantize_model_static(ident, stats)
    dynamic = quantize_model_dynamic(ident)
    big = as_f32([100.0])
    y_static, _ = forward_quantized(static, big)
    y_dynamic, _ = forward_quantized(dynamic, big)
    # static clamps at the calibrated ceiling (~1); dynamic rescans and follows
    assert y_static[0] < 2.0
    assert y_dynamic[0] == pytest.approx(100.0, abs=1.0)


def test_identity_dense_round_trips_within_one_scale_step():
    n = 8
    ident = ModelGraph(
        layers=[Dense(np.eye(n), np.zeros(n))],
        input_shape=(n,),
        labels=[f"c{i}" for i in range(n)],
    )
    samples = [as_f32(np.linspace(-1.0, 1.0, n)), as_f32(np.linspace(1.0, -1.0, n))]
    qm = quantize_model_static(ident, calibrate(ident, samples))
    in_scale = qm.activation_params[0].scale
    x = as_f32(np.linspace(-0.9, 0.9, n))
    y, _ = forward_quantized(qm, x)
    assert float(np.abs(y - x).max()) <= in_scale


def test_dynamic_handles_all_zero_activations():
    model = ModelGraph(
        layers=[Dense(np.eye(2), np.ones(2)), Softmax()],
        input_shape=(2,),
        labels=["a", "b"],
    )
    qm = quantize_model_dynamic(model)
    out, _ = forward_quantized(qm, np.zeros(2, dtype=np.float32))
    assert np.isfinite(out).all()


def test_forward_quantized_rejects_wrong_shape(small_static):
    with pytest.raises(ShapeError, match="does not match model input"):
        forward_quantized(small_static, np.zeros((3, 3), dtype=np.float32))


def test_bias_scale_composition(small_model, small_static, small_dynamic):
    dense = next(l for l in small_model.layers if isinstance(l, Dense))
    q_static = next(e[1] for e in small_static.layers if e[0] == "dense")
    q_dynamic = next(e[1] for e in small_dynamic.layers if e[0] == "dense")
    w_scale = np.float32(q_static.weights.params.scale)
    first_dense_site = next(
        i for i, e in enumerate(small_static.layers) if e[0] == "dense"
    )
    in_scale = np.float32(small_static.activation_params[first_dense_site].scale)
    assert q_static.bias_scale == float(w_scale * in_scale)
    # dynamic mode has no calibrated input scale; bias freezes at w_scale * 1.0
    assert q_dynamic.bias_scale == float(np.float32(q_dynamic.weights.params.scale))
    assert dense.bias.shape == q_static.bias_q.shape


# ---------------------------------------------------------------------------
# Counters and whole-model behavior on the toy fixture
# ---------------------------------------------------------------------------


def test_counter_profile_static_vs_dynamic(small_static, small_dynamic, small_ds):
    x = images_to_inputs(small_ds.test_images[:1])[0]
    _, c_static = forward_quantized(small_static, x)
    _, c_dynamic = forward_quantized(small_dynamic, x)
    assert c_static.int_mul_adds == c_dynamic.int_mul_adds > 0
    assert c_static.range_scans == 0
    n_linear = sum(1 for e in small_static.layers if e[0] in ("dense", "conv2d"))
    assert c_dynamic.range_scans == n_linear
    assert c_static.float_mul_adds == c_dynamic.float_mul_adds == 0


def test_int_mac_count_matches_weight_sizes(small_static, small_ds):
    x = images_to_inputs(small_ds.test_images[:1])[0]
    _, counters = forward_quantized(small_static, x)
    expected = sum(
        e[1].weights.qdata.size for e in small_static.layers if e[0] in ("dense", "conv2d")
    )
    assert counters.int_mul_adds == expected


def test_quantized_agreement_with_fp32(small_model, small_static, small_dynamic, small_ds):
    xs = images_to_inputs(small_ds.test_images)
    agree_s = agree_d = 0
    for x in xs:
        ref, _ = forward_fp32(small_model, x)
        ys, _ = forward_quantized(small_static, x)
        yd, _ = forward_quantized(small_dynamic, x)
        agree_s += int(np.argmax(ys) == np.argmax(ref))
        agree_d += int(np.argmax(yd) == np.argmax(ref))
    assert agree_s / len(xs) >= 0.8
    assert agree_d / len(xs) >= 0.8


def test_quantized_models_do_not_retain_fp32_weights(small_static):
    for entry in small_static.layers:
        if entry[0] in ("dense", "conv2d"):
            assert entry[1].weights.qdata.dtype == np.int8
            assert entry[1].bias_q.dtype == np.int32


def test_size_report():
    assert size_report(400, 100) == 4.0
    with pytest.raises(InvalidDataError):
        size_report(0, 1)
    with pytest.raises(InvalidDataError):
        size_report(10, -1)
