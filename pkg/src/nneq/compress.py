"""Magnitude pruning with a polynomial-decay schedule and symmetric INT8 PTQ.

Quantization follows ``x_q = clip(round(x/s + z), q_min, q_max)`` with
``z = 0``, bounds ``+-127`` and rounding half away from zero.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, InputError
from .neuralnet import MlpModel, WindowedDataset, train

_ACT = {"tanh": np.tanh, "identity": lambda z: z}


@dataclass(frozen=True)
class PruneSchedule:
    s0: float = 0.0
    sf: float = 0.6
    power: float = 3.0
    prune_every_steps: int = 50
    total_epochs: int = 300

    def __post_init__(self):
        if not 0 <= self.s0 <= self.sf < 1:
            raise ConfigurationError("need 0 <= s0 <= sf < 1")
        if not self.power > 0:
            raise ConfigurationError("power must be positive")
        if self.prune_every_steps < 1 or self.total_epochs < 1:
            raise ConfigurationError("prune_every_steps and total_epochs must be >= 1")


def target_sparsity(step, sched, total_steps):
    """Polynomial decay ``sf + (s0 - sf) * (1 - t/T)**power``.

    ``t`` is ``step`` rounded down to the pruning cadence, so the value is
    held between pruning events; ``step >= T`` returns ``sf``.
    """
    if step < 0 or step > total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    if step >= total_steps:
        return sched.sf
    t = (step // sched.prune_every_steps) * sched.prune_every_steps
    return sched.sf + (sched.s0 - sched.sf) * (1 - t / total_steps) ** sched.power


def magnitude_mask(w, sparsity, keep=None):
    """0/1 mask removing the ``floor(sparsity * w.size)`` smallest ``|w|``.

    Ties are broken by flat (row-major) index: the earlier entry is pruned
    first. ``keep`` is an existing mask that is never re-enabled.
    """
    if not 0 <= sparsity < 1:
        raise InputError("sparsity must lie in [0, 1)")
    k = int(math.floor(sparsity * w.size))
    mag = np.abs(w).ravel()
    if keep is not None:
        mag = np.where(keep.ravel() > 0, mag, -1.0)
    mask = np.ones(w.size, dtype=np.uint8)
    mask[np.argsort(mag, kind="stable")[:k]] = 0
    mask = mask.reshape(w.shape)
    if keep is not None:
        mask &= keep.astype(np.uint8)
    return mask


def prune_magnitude(model, sparsity):
    """Per-layer magnitude pruning; returns a new model carrying masks."""
    old = model.masks or [None] * len(model.weights)
    masks = [magnitude_mask(w, sparsity, m) for w, m in zip(model.effective_weights(), old)]
    out = MlpModel(list(model.dims), [w.copy() for w in model.weights], list(model.activations), masks)
    return out


def _prune_in_place(model, sparsity):
    old = model.masks or [None] * len(model.weights)
    model.masks = [magnitude_mask(w, sparsity, m) for w, m in zip(model.weights, old)]
    model.apply_masks()


@dataclass
class PruneResult:
    model: MlpModel
    history: object
    trace: List[tuple] = field(default_factory=list)


def prune_with_finetune(model, sched, train_set, train_cfg, test_set=None, eval_every=None):
    """Fine-tune ``model`` for ``sched.total_epochs`` epochs while raising sparsity.

    Every ``prune_every_steps`` optimizer steps the weights are re-pruned to
    :func:`target_sparsity`; Adam state starts fresh. The recorded ``trace``
    holds ``(step, sparsity)`` for every pruning event.
    """
    steps_per_epoch = math.ceil(len(train_set) / train_cfg.batch_size)
    total = sched.total_epochs * steps_per_epoch
    trace = []

    start = model.copy()
    _prune_in_place(start, target_sparsity(0, sched, total))
    trace.append((0, sched.s0))

    def on_step(m, step):
        if step % sched.prune_every_steps == 0 or step == total:
            s = target_sparsity(step, sched, total)
            _prune_in_place(m, s)
            trace.append((step, s))

    cfg = replace(train_cfg, max_epochs=sched.total_epochs, patience_epochs=0)
    pruned, hist = train(start, train_set, test_set, cfg, step_callback=on_step,
                         eval_every=eval_every or sched.total_epochs, early_stop=False)
    return PruneResult(pruned, hist, trace)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0
    q_min: int = -127
    q_max: int = 127
    bits: int = 8

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive")
        if self.q_min >= self.q_max:
            raise ConfigurationError("q_min must be below q_max")

    @classmethod
    def symmetric(cls, max_abs, bits=8):
        q = 2 ** (bits - 1) - 1
        scale = float(max_abs) / q if max_abs > 0 else 1.0
        return cls(scale, 0, -q, q, bits)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_value(x, qp):
    """Scalar (or elementwise) ``clip(round(x/s + z), q_min, q_max)``."""
    y = np.clip(round_half_away(np.asarray(x, dtype=np.float64) / qp.scale + qp.zero_point), qp.q_min, qp.q_max)
    if np.ndim(y) == 0:
        return int(y)
    return y.astype(np.int32)


def dequantize(q, qp):
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


@dataclass
class ActivationRanges:
    """Observed ``(min, max)`` at every layer boundary.

    Index 0 is the network input, ``1..L-1`` the hidden activations and ``L``
    the output.
    """

    mins: List[float]
    maxs: List[float]

    def max_abs(self, k):
        return max(abs(self.mins[k]), abs(self.maxs[k]))


def calibrate_activations(model, samples, n_samples=100):
    """Min/max of each boundary over the first ``n_samples`` rows of ``samples``."""
    x = samples.inputs if isinstance(samples, WindowedDataset) else np.asarray(samples)
    x = x[:n_samples]
    if x.shape[0] == 0:
        raise InputError("empty calibration set")
    a = x.astype(np.float64)
    mins, maxs = [float(a.min())], [float(a.max())]
    ws = model.effective_weights()
    for k, w in enumerate(ws):
        a = a @ w.astype(np.float64)
        if k < len(ws) - 1:
            a = _ACT[model.activations[k]](a)
        mins.append(float(a.min()))
        maxs.append(float(a.max()))
    return ActivationRanges(mins, maxs)


@dataclass
class QuantizedModel:
    """INT8 weights per layer plus the scales needed for integer inference.

    ``act_qparams[k]`` quantizes the output of hidden layer ``k``; the
    network input stays in floating point (``input_bits = 32``).
    """

    dims: List[int]
    int_weights: List[np.ndarray]
    weight_qparams: List[QuantParams]
    act_qparams: List[QuantParams]
    activations: List[str]
    ranges: Optional[ActivationRanges] = None
    input_bits: int = 32
    bits: int = 8

    @property
    def n_weights(self):
        return sum(w.size for w in self.int_weights)

    @property
    def sparsity(self):
        return sum(int(np.count_nonzero(w == 0)) for w in self.int_weights) / self.n_weights

    def predict(self, x):
        return infer_int8(self, x)


def accumulator_bound(fan_in, qp_w, qp_a):
    return fan_in * max(abs(qp_w.q_min), qp_w.q_max) * max(abs(qp_a.q_min), qp_a.q_max)


def quantize_ptq(model, ranges, bits=8):
    """Post-training quantization with per-tensor symmetric scales.

    Weights use ``s_w = max|W| / 127``; hidden activations use
    ``s_a = max(|min|, |max|) / 127`` from ``ranges``. Raises
    :class:`ConfigurationError` if an integer accumulator could exceed 32 bits.
    """
    ws = model.effective_weights()
    int_w, wq = [], []
    for w in ws:
        qp = QuantParams.symmetric(float(np.max(np.abs(w))) if w.size else 0.0, bits)
        int_w.append(quantize_value(w, qp).astype(np.int8))
        wq.append(qp)
    aq = [QuantParams.symmetric(ranges.max_abs(k), bits) for k in range(1, len(ws))]
    for k in range(1, len(ws)):
        if accumulator_bound(model.dims[k], wq[k], aq[k - 1]) >= 2**31:
            raise ConfigurationError(f"layer {k} accumulator may overflow 32 bits")
    return QuantizedModel(list(model.dims), int_w, wq, aq, list(model.activations), ranges, 32, bits)


def dequantize_model(qm):
    ws = [dequantize(w, qp).astype(np.float32) for w, qp in zip(qm.int_weights, qm.weight_qparams)]
    return MlpModel(list(qm.dims), ws, list(qm.activations))


def _int_matmul(a, w):
    """Exact integer product ``a @ w`` for integer-valued operands.

    Uses float BLAS: every partial sum is an integer bounded by the
    accumulator bound, so float32 is exact below 2**24 and float64 below 2**53.
    """
    bound = a.shape[1] * 127 * 127
    dt = np.float32 if bound < 2**24 else np.float64
    return (a.astype(dt) @ w.astype(dt)).astype(np.int64)


def infer_int8(qm, x):
    """Integer inference: INT8 weights and activations, 32-bit accumulation.

    Layer 0 multiplies the floating-point input by the INT8 weights; each
    later layer accumulates ``int8 x int8`` products, rescales by
    ``s_w * s_a``, applies the activation in real arithmetic and requantizes.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != qm.dims[0]:
        raise InputError(f"batch shape {x.shape} does not match input width {qm.dims[0]}")
    n_layers = len(qm.int_weights)
    z = (x.astype(np.float32) @ qm.int_weights[0].astype(np.float32)).astype(np.float64)
    z *= qm.weight_qparams[0].scale
    for k in range(1, n_layers + 1):
        if k == n_layers:
            return z
        a = _ACT[qm.activations[k - 1]](z)
        a_q = quantize_value(a, qm.act_qparams[k - 1])
        acc = _int_matmul(a_q, qm.int_weights[k])
        z = acc * (qm.weight_qparams[k].scale * qm.act_qparams[k - 1].scale)
    return z


def fake_quant_forward(qm, x):
    """Floating-point reference for :func:`infer_int8` (quantize-dequantize at each boundary)."""
    ws = [dequantize(w, qp) for w, qp in zip(qm.int_weights, qm.weight_qparams)]
    z = np.asarray(x, dtype=np.float64) @ ws[0]
    for k in range(1, len(ws)):
        a = _ACT[qm.activations[k - 1]](z)
        a = dequantize(quantize_value(a, qm.act_qparams[k - 1]), qm.act_qparams[k - 1])
        z = a @ ws[k]
    return z
