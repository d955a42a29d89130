import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nneq.compress import (
    ActivationRanges,
    PruneSchedule,
    QuantParams,
    accumulator_bound,
    calibrate_activations,
    dequantize,
    dequantize_model,
    fake_quant_forward,
    infer_int8,
    magnitude_mask,
    prune_magnitude,
    prune_with_finetune,
    quantize_ptq,
    quantize_value,
    round_half_away,
    target_sparsity,
)
from nneq.errors import ConfigurationError, InputError
from nneq.neuralnet import MlpModel, TrainConfig, WindowedDataset, forward, init_model


# ---------------------------------------------------------------- schedule


def test_schedule_values():
    sched = PruneSchedule(s0=0.0, sf=0.6, power=3, prune_every_steps=1)
    assert target_sparsity(0, sched, 100) == 0.0
    assert target_sparsity(50, sched, 100) == pytest.approx(0.525)
    assert target_sparsity(100, sched, 100) == 0.6


def test_schedule_held_between_events():
    sched = PruneSchedule(sf=0.6, prune_every_steps=50)
    assert target_sparsity(49, sched, 1000) == 0.0
    assert target_sparsity(120, sched, 1000) == target_sparsity(100, sched, 1000)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.9), st.integers(1, 60))
def test_schedule_monotone_and_bounded(sf, every):
    sched = PruneSchedule(sf=sf, prune_every_steps=every)
    vals = [target_sparsity(t, sched, 300) for t in range(301)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[0] == 0 and vals[-1] == sf
    assert all(0 <= v <= sf + 1e-15 for v in vals)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        PruneSchedule(sf=1.0)
    with pytest.raises(ConfigurationError):
        PruneSchedule(s0=0.5, sf=0.2)
    with pytest.raises(InputError):
        target_sparsity(11, PruneSchedule(), 10)


# ---------------------------------------------------------------- magnitude pruning


def test_prune_example():
    w = np.array([[3.0, -1.0], [0.5, 2.0]])
    mask = magnitude_mask(w, 0.5)
    np.testing.assert_array_equal(mask, [[1, 0], [0, 1]])


def test_prune_tie_break_by_index():
    w = np.array([1.0, -1.0, 1.0, 2.0])
    np.testing.assert_array_equal(magnitude_mask(w, 0.5), [0, 0, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 0.99))
def test_pruned_never_larger_than_kept(seed, s):
    w = np.random.default_rng(seed).standard_normal((7, 9))
    mask = magnitude_mask(w, s)
    assert int(np.count_nonzero(mask == 0)) == math.floor(s * w.size)
    pruned, kept = np.abs(w[mask == 0]), np.abs(w[mask == 1])
    if pruned.size and kept.size:
        assert pruned.max() <= kept.min()


def test_prune_per_layer_and_no_resurrection():
    model = init_model([6, 8, 2], seed=0)
    a = prune_magnitude(model, 0.5)
    for w in a.effective_weights():
        assert np.count_nonzero(w == 0) == w.size // 2
    # grow the pruned entries and re-prune at a higher sparsity
    a.weights = [np.where(m == 0, 100.0, w).astype(w.dtype) for w, m in zip(a.weights, a.masks)]
    b = prune_magnitude(a, 0.75)
    for ma, mb in zip(a.masks, b.masks):
        assert np.all(mb <= ma)
    assert model.masks is None


def test_prune_finetune_reaches_target_and_keeps_zeros():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((256, 6))
    ds = WindowedDataset(x, np.tanh(x[:, :2]), 0)
    model = init_model([6, 16, 2], seed=1)
    sched = PruneSchedule(sf=0.7, prune_every_steps=4, total_epochs=10)
    res = prune_with_finetune(model, sched, ds, TrainConfig(batch_size=32))
    total = 10 * 8
    assert res.trace[0] == (0, 0.0)
    assert res.trace[-1] == (total, 0.7)
    assert [s for _, s in res.trace] == sorted(s for _, s in res.trace)
    for w in res.model.effective_weights():
        assert np.count_nonzero(w == 0) >= math.floor(0.7 * w.size)
    assert res.history.steps == total
    assert len(res.history.epochs) == 10


# ---------------------------------------------------------------- quantizer


def test_quantizer_examples():
    qp = QuantParams(0.02)
    assert quantize_value(0.5, qp) == 25
    assert quantize_value(0.01, qp) == 1  # 0.5 rounds away from zero
    assert quantize_value(-0.01, qp) == -1
    assert quantize_value(10.0, qp) == 127
    assert quantize_value(-10.0, qp) == -127
    assert dequantize(25, qp) == pytest.approx(0.5)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -2.5, 0.49])),
                                  [1, 2, 3, -1, -3, 0])


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(1e-4, 1))
def test_round_trip_within_half_step(x, max_abs):
    qp = QuantParams.symmetric(max_abs)
    xc = max(-max_abs, min(max_abs, x))
    q = quantize_value(xc, qp)
    assert -127 <= q <= 127
    assert abs(dequantize(q, qp) - xc) <= qp.scale / 2 + 1e-12
    assert quantize_value(-xc, qp) == -q


def test_quant_params_validation():
    with pytest.raises(ConfigurationError):
        QuantParams(0.0)
    assert QuantParams.symmetric(0.0).scale == 1.0
    assert QuantParams.symmetric(1.27).scale == pytest.approx(0.01)


# ---------------------------------------------------------------- calibration and PTQ


def _model_and_data(seed=0, dims=(12, 20, 6, 20, 2)):
    model = init_model(list(dims), seed=seed)
    x = np.random.default_rng(seed).standard_normal((300, dims[0])).astype(np.float32)
    return model, x


def test_calibration_properties():
    model, x = _model_and_data()
    r = calibrate_activations(model, x, 100)
    assert len(r.mins) == len(model.dims)
    assert r.mins[0] == pytest.approx(float(x[:100].min()))
    for k in range(1, len(model.dims) - 1):
        assert -1 <= r.mins[k] <= r.maxs[k] <= 1  # tanh outputs
    # only the first n_samples rows are used
    x2 = x.copy()
    x2[100:] *= 1000
    assert calibrate_activations(model, x2, 100).maxs == r.maxs
    with pytest.raises(InputError):
        calibrate_activations(model, x[:0])


def test_ptq_weight_error_bound_and_zeros():
    model, x = _model_and_data()
    model = prune_magnitude(model, 0.6)
    qm = quantize_ptq(model, calibrate_activations(model, x))
    for w, wi, qp in zip(model.effective_weights(), qm.int_weights, qm.weight_qparams):
        assert wi.dtype == np.int8
        assert np.max(np.abs(wi)) == 127
        assert np.max(np.abs(dequantize(wi, qp) - w)) <= qp.scale / 2 + 1e-7
        assert np.all(wi[w == 0] == 0)
    assert qm.sparsity >= 0.6


def test_int8_inference_matches_fake_quant():
    model, x = _model_and_data()
    qm = quantize_ptq(model, calibrate_activations(model, x))
    y_int = infer_int8(qm, x)
    y_ref = fake_quant_forward(qm, x)
    np.testing.assert_allclose(y_int, y_ref, rtol=1e-5, atol=1e-5)
    # and stays close to the float model
    y_fp = forward(model, x)
    assert np.max(np.abs(y_int - y_fp)) < 0.05 * np.max(np.abs(y_fp))


def test_int_matmul_matches_int32_reference():
    model, x = _model_and_data(dims=(12, 500, 10, 500, 2))
    qm = quantize_ptq(model, calibrate_activations(model, x))
    # reference: hidden layer 1 computed with explicit int32 accumulation
    z = (x.astype(np.float32) @ qm.int_weights[0].astype(np.float32)).astype(np.float64) * qm.weight_qparams[0].scale
    a_q = quantize_value(np.tanh(z), qm.act_qparams[0])
    acc_ref = a_q.astype(np.int32) @ qm.int_weights[1].astype(np.int32)
    from nneq.compress import _int_matmul

    assert np.array_equal(_int_matmul(a_q, qm.int_weights[1]), acc_ref.astype(np.int64))


def test_accumulator_bound():
    qp = QuantParams.symmetric(1.0)
    assert accumulator_bound(500, qp, qp) == 500 * 127 * 127
    assert accumulator_bound(500, qp, qp) < 2**31


def test_dequantize_model_shape():
    model, x = _model_and_data()
    qm = quantize_ptq(model, calibrate_activations(model, x))
    dm = dequantize_model(qm)
    assert dm.dims == model.dims
    for a, b, qp in zip(dm.weights, model.weights, qm.weight_qparams):
        assert np.max(np.abs(a - b)) <= qp.scale / 2 + 1e-6


def test_all_zero_model_quantizes():
    model = MlpModel([3, 2, 2], [np.zeros((3, 2), np.float32), np.zeros((2, 2), np.float32)])
    qm = quantize_ptq(model, ActivationRanges([0, 0, 0], [0, 0, 0]))
    assert np.all(infer_int8(qm, np.ones((4, 3))) == 0)
