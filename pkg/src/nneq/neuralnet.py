"""Bias-free MLP equalizer: windowing, forward/backward pass, Adam training."""

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dsp import quality
from .errors import DivergenceError, InputError

DEFAULT_DIMS = (84, 500, 10, 500, 2)

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


@dataclass
class MlpModel:
    """Weights ``W_k`` have shape ``(fan_in, fan_out)``; there are no biases.

    ``masks`` (same shapes, 0/1) mark pruned weights; masked entries of
    ``weights`` are kept at exactly zero.
    """

    dims: List[int]
    weights: List[np.ndarray]
    activations: List[str] = None
    masks: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        n_hidden = max(len(self.dims) - 2, 0)
        if self.activations is None:
            self.activations = ["tanh"] * n_hidden
        if len(self.weights) != len(self.dims) - 1:
            raise InputError("need one weight matrix per layer")
        if len(self.activations) != n_hidden:
            raise InputError("need one activation per hidden layer")
        for k, w in enumerate(self.weights):
            if w.shape != (self.dims[k], self.dims[k + 1]):
                raise InputError(f"layer {k} weight shape {w.shape} does not match dims")
        if self.masks is not None:
            self.apply_masks()

    @property
    def n_weights(self):
        return sum(w.size for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def apply_masks(self):
        if self.masks is not None:
            for w, m in zip(self.weights, self.masks):
                w *= m.astype(w.dtype)

    def effective_weights(self):
        if self.masks is None:
            return self.weights
        return [w * m.astype(w.dtype) for w, m in zip(self.weights, self.masks)]

    def sparsity(self):
        zeros = sum(int(np.count_nonzero(w == 0)) for w in self.effective_weights())
        return zeros / self.n_weights

    def predict(self, x):
        return forward(self, x)

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class WindowedDataset:
    """Sliding windows of ``M = 2N+1`` dual-pol symbols around each target.

    ``inputs`` has shape ``(B, 4M)``: the ``(B, M, 4)`` tensor with features
    ``(Re h, Im h, Re v, Im v)`` flattened symbol-major.
    """

    inputs: np.ndarray
    targets: np.ndarray
    n_neighbors: int
    polarization: str = "h"
    center_rx: Optional[np.ndarray] = None

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def memory(self):
        return 2 * self.n_neighbors + 1

    def subset(self, n):
        c = None if self.center_rx is None else self.center_rx[:n]
        return WindowedDataset(self.inputs[:n], self.targets[:n], self.n_neighbors, self.polarization, c)

    def target_symbols(self):
        return self.targets[:, 0] + 1j * self.targets[:, 1]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 1000
    patience_epochs: int = 150
    min_delta: float = 1e-5
    batch_size: int = 2048
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError("lr must be positive")
        if self.patience_epochs >= self.max_epochs:
            raise InputError("patience must be smaller than max_epochs")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


def init_model(dims=DEFAULT_DIMS, seed=0, activations=None, dtype=np.float32):
    """Glorot-uniform initialization, ``U(-r, r)`` with ``r = sqrt(6/(fan_in+fan_out))``."""
    rng = np.random.Generator(np.random.MT19937(seed))
    weights = []
    for fi, fo in zip(dims[:-1], dims[1:]):
        r = math.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-r, r, size=(fi, fo)).astype(dtype))
    return MlpModel(list(dims), weights, activations)


def build_windows(block, n_neighbors=10, polarization="h"):
    """One window per symbol that has ``N`` neighbors on both sides."""
    m = 2 * n_neighbors + 1
    n = len(block)
    if block.rx_h is None:
        raise InputError("block has no received symbols")
    if n < m:
        raise InputError(f"block of {n} symbols is shorter than the window ({m})")
    feats = np.stack([block.rx_h.real, block.rx_h.imag, block.rx_v.real, block.rx_v.imag], axis=1)
    win = np.lib.stride_tricks.sliding_window_view(feats, m, axis=0)  # (B, 4, M)
    inputs = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(n - m + 1, 4 * m)
    tx = block.tx(polarization)[n_neighbors : n - n_neighbors]
    targets = np.stack([tx.real, tx.imag], axis=1)
    center = block.rx(polarization)[n_neighbors : n - n_neighbors].copy()
    return WindowedDataset(inputs, targets, n_neighbors, polarization, center)


def _check_batch(model, x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise InputError(f"batch shape {x.shape} does not match input width {model.dims[0]}")
    return x


def forward(model, x):
    """``y = W_L^T f(... f(W_1^T x))`` with masks applied to the weights."""
    a = _check_batch(model, x).astype(model.dtype, copy=False)
    ws = model.effective_weights()
    for k, w in enumerate(ws):
        a = a @ w
        if k < len(ws) - 1:
            a = _ACTIVATIONS[model.activations[k]][0](a)
    return a


def loss_and_grads(model, x, y):
    """MSE (mean over batch and outputs) and its gradient for every weight matrix."""
    x = _check_batch(model, x).astype(model.dtype, copy=False)
    ws = model.effective_weights()
    acts = [x]
    a = x
    for k, w in enumerate(ws):
        a = a @ w
        if k < len(ws) - 1:
            a = _ACTIVATIONS[model.activations[k]][0](a)
        acts.append(a)
    err = acts[-1] - y
    loss = float(np.mean(err.astype(np.float64) ** 2))
    delta = (2.0 / err.size) * err
    grads = [None] * len(ws)
    for k in range(len(ws) - 1, -1, -1):
        grads[k] = acts[k].T @ delta
        if k > 0:
            delta = (delta @ ws[k].T) * _ACTIVATIONS[model.activations[k - 1]][1](acts[k])
    if model.masks is not None:
        grads = [g * m.astype(g.dtype) for g, m in zip(grads, model.masks)]
    return loss, grads


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


def predict_symbols(model, dataset):
    y = model.predict(dataset.inputs) if hasattr(model, "predict") else model(dataset.inputs)
    y = np.asarray(y, dtype=np.float64)
    return y[:, 0] + 1j * y[:, 1]


def evaluate_dataset(model, dataset):
    return quality(predict_symbols(model, dataset), dataset.target_symbols())


@dataclass
class TrainHistory:
    epochs: List[dict] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False

    def append(self, **row):
        self.epochs.append(row)

    @property
    def train_mse(self):
        return [r["train_mse"] for r in self.epochs]


def train(model, train_set, test_set, cfg, step_callback=None, eval_every=1, early_stop=True):
    """Mini-batch Adam on MSE with per-epoch shuffling and loss-plateau early stopping.

    The input model is not modified. ``step_callback(model, step)`` runs after
    every optimizer step (used for pruning); masks on the model are honored and
    masked weights stay zero. Returns ``(trained_model, history)``.
    """
    if len(train_set) == 0 or (test_set is not None and len(test_set) == 0):
        raise InputError("empty dataset")
    model = model.copy()
    rng = np.random.Generator(np.random.MT19937(cfg.seed))
    opt = Adam(model.weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    hist = TrainHistory()
    best = math.inf
    stale = 0
    n = len(train_set)
    x_all = train_set.inputs.astype(model.dtype)
    y_all = train_set.targets.astype(model.dtype)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x_all[idx], y_all[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", step=hist.steps)
            opt.step(model.weights, grads)
            model.apply_masks()
            hist.steps += 1
            total += loss * idx.size
            if step_callback is not None:
                step_callback(model, hist.steps)
        epoch_loss = total / n
        row = {"epoch": epoch, "train_mse": epoch_loss, "test_ber": math.nan, "test_q_db": math.nan}
        if test_set is not None and (epoch % eval_every == 0 or epoch == cfg.max_epochs):
            m = evaluate_dataset(model, test_set)
            row.update(test_ber=m.ber, test_q_db=m.q_db)
        hist.append(**row)
        if epoch_loss < best * (1 - cfg.min_delta):
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if early_stop and stale >= cfg.patience_epochs:
                hist.stopped_early = True
                break
    return model, hist


def evaluate_q(model, block, n_neighbors=10, polarization="h"):
    """Equalize every full window of ``block`` and report BER/Q of the chosen polarization."""
    return evaluate_dataset(model, build_windows(block, n_neighbors, polarization))


def linear_q(block, n_neighbors=10, polarization="h"):
    """Q of the linear-DSP output over the same symbols :func:`evaluate_q` scores."""
    n = len(block)
    rx = block.rx(polarization)[n_neighbors : n - n_neighbors]
    tx = block.tx(polarization)[n_neighbors : n - n_neighbors]
    return quality(rx, tx)


def write_history_csv(path, history):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "train_mse", "test_ber", "test_q_db"])
        for r in history.epochs:
            wr.writerow([r["epoch"], repr(r["train_mse"]), repr(r["test_ber"]), repr(r["test_q_db"])])
