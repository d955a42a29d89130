"""End-to-end experiment: simulate, equalize, prune, quantize, account, benchmark.

Every stage writes a checkpoint under ``<output_dir>/checkpoints`` and is
skipped on rerun when its checkpoint exists (``resume=True``).
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from . import complexity as cx
from .bench import bench_latency
from .compress import calibrate_activations, prune_with_finetune, quantize_ptq
from .datafile import read_symbols, write_symbols
from .dsp import QualityMetrics, receive
from .errors import StageError
from .neuralnet import (build_windows, evaluate_dataset, init_model, linear_q, train,
                        write_history_csv)
from .signals import SymbolBlock
from .txsim import simulate_link

log = logging.getLogger(__name__)

STAGE_ORDER = ("simulate", "train", "prune", "quantize", "complexity", "bench")
Q_STAGES = ("LE", "FP32", "pruned", "pruned+quant")


@dataclass(frozen=True)
class QRow:
    power_dbm: float
    sparsity: float
    stage: str
    ber: float
    q_db: float
    polarization: str = "h"
    n_bits: int = 0


@dataclass
class Results:
    q_rows: List[QRow] = field(default_factory=list)
    complexity: List[cx.ComplexityReport] = field(default_factory=list)
    latency: List[tuple] = field(default_factory=list)

    def q(self, power, stage, sparsity=0.0, pol="h"):
        for r in self.q_rows:
            if (r.power_dbm == power and r.stage == stage and r.polarization == pol
                    and abs(r.sparsity - sparsity) < 1e-9):
                return r.q_db
        raise KeyError((power, stage, sparsity, pol))


def _tag(x):
    return f"{x:+.2f}".replace("+", "p").replace("-", "m").replace(".", "_")


def _c64(block):
    # both fresh and resumed runs see the complex64 values stored on disk
    cast = lambda a: a.astype(np.complex64).astype(np.complex128)
    return SymbolBlock(cast(block.tx_h), cast(block.tx_v), cast(block.rx_h), cast(block.rx_v),
                       block.launch_power_dbm)


class Pipeline:
    def __init__(self, cfg, resume=True):
        self.cfg = cfg
        self.resume = resume
        self.out = cfg.output_dir
        self.ckpt = os.path.join(self.out, "checkpoints")
        os.makedirs(self.ckpt, exist_ok=True)
        self.results = Results()
        self.blocks = {}
        self.fp32 = {}
        self.pruned = {}
        self.quantized = {}

    def _path(self, name):
        return os.path.join(self.ckpt, name)

    def _stage(self, name, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as e:  # noqa: BLE001 - rewrapped with replay info
            raise StageError(name, self.cfg.seeds, e) from e

    # -- simulate ---------------------------------------------------------

    def _simulate_one(self, power, kind):
        cfg, seeds = self.cfg, self.cfg.seeds
        path = self._path(f"symbols_{_tag(power)}_{kind}.sym")
        if self.resume and os.path.exists(path):
            block, _ = read_symbols(path)
            return _c64(SymbolBlock(block.tx_h, block.tx_v, block.rx_h, block.rx_v, power))
        n = cfg.n_symbols_train if kind == "train" else cfg.n_symbols_test
        tx = replace(cfg.tx, launch_power_dbm=power, seed=seeds[f"{kind}_data"])
        amp = replace(cfg.amp, seed=seeds[f"ase_{kind}"])
        log.info("simulating %s set at %+.1f dBm (%d symbols)", kind, power, n)
        block, w = simulate_link(tx, cfg.fiber, amp, n, cfg.manakov_factor)
        block = _c64(receive(w, block, tx, cfg.fiber))
        write_symbols(path, block, tx.baud_rate_hz)
        return block

    def simulate(self):
        N = self.cfg.net.n_neighbors
        for p in self.cfg.launch_powers_dbm:
            for kind in ("train", "test"):
                self.blocks[p, kind] = self._stage("simulate", self._simulate_one, p, kind)
            for pol in self.cfg.net.polarizations:
                m = linear_q(self.blocks[p, "test"], N, pol)
                self._add(p, 0.0, "LE", m, pol)

    def _add(self, power, sparsity, stage, metrics, pol):
        self.results.q_rows.append(QRow(power, sparsity, stage, metrics.ber, metrics.q_db, pol, metrics.n_bits))

    def _windows(self, p, kind, pol):
        return build_windows(self.blocks[p, kind], self.cfg.net.n_neighbors, pol)

    # -- train -------------------------------------------------------------

    def _train_one(self, p, pol):
        path = self._path(f"fp32_{_tag(p)}_{pol}.mlpz")
        if self.resume and os.path.exists(path):
            return cx.load_model(path)
        cfg = self.cfg
        log.info("training FP32 model at %+.1f dBm, pol %s", p, pol)
        model = init_model(cfg.net.dims, cfg.seeds["init"])
        tcfg = replace(cfg.train, seed=cfg.seeds["shuffle"])
        model, hist = train(model, self._windows(p, "train", pol), self._windows(p, "test", pol), tcfg)
        write_history_csv(os.path.join(self.out, f"history_{_tag(p)}_{pol}.csv"), hist)
        cx.save_model(path, model)
        return model

    def train(self):
        for p in self.cfg.launch_powers_dbm:
            for pol in self.cfg.net.polarizations:
                model = self._stage("train", self._train_one, p, pol)
                self.fp32[p, pol] = model
                self._add(p, 0.0, "FP32", evaluate_dataset(model, self._windows(p, "test", pol)), pol)

    # -- prune -------------------------------------------------------------

    def _prune_one(self, p, pol, s):
        path = self._path(f"pruned_{_tag(p)}_{pol}_{_tag(s)}.mlpz")
        if self.resume and os.path.exists(path):
            return cx.load_model(path)
        cfg = self.cfg
        log.info("pruning to %.0f%% at %+.1f dBm, pol %s", 100 * s, p, pol)
        sched = replace(cfg.prune, sf=s)
        tcfg = replace(cfg.train, seed=cfg.seeds["finetune"])
        res = prune_with_finetune(self.fp32[p, pol], sched, self._windows(p, "train", pol), tcfg)
        cx.save_model(path, res.model)
        return res.model

    def prune(self):
        for p in self.cfg.launch_powers_dbm:
            for pol in self.cfg.net.polarizations:
                for s in self.cfg.sparsities:
                    if s == 0:
                        model = self.fp32[p, pol]
                    else:
                        model = self._stage("prune", self._prune_one, p, pol, s)
                    self.pruned[p, pol, s] = model
                    if s > 0:
                        m = evaluate_dataset(model, self._windows(p, "test", pol))
                        self._add(p, s, "pruned", m, pol)

    # -- quantize ----------------------------------------------------------

    def _quantize_one(self, p, pol, s, model):
        path = self._path(f"int8_{_tag(p)}_{pol}_{_tag(s)}.mlpz")
        if self.resume and os.path.exists(path):
            return cx.load_model(path)
        test = self._windows(p, "test", pol)
        ranges = calibrate_activations(model, test, self.cfg.calibration_samples)
        qm = quantize_ptq(model, ranges)
        cx.save_model(path, qm, cx.BITMAP_I8)
        return qm

    def quantize(self):
        if not self.cfg.quantize:
            return
        for p in self.cfg.launch_powers_dbm:
            for pol in self.cfg.net.polarizations:
                todo = [(0.0, self.fp32[p, pol])] + [(s, self.pruned[p, pol, s]) for s in self.cfg.sparsities if s > 0]
                for s, model in todo:
                    qm = self._stage("quantize", self._quantize_one, p, pol, s, model)
                    self.quantized[p, pol, s] = qm
                    m = evaluate_dataset(qm, self._windows(p, "test", pol))
                    self._add(p, s, "pruned+quant", m, pol)

    # -- complexity ----------------------------------------------------------

    def complexity(self):
        self.results.complexity = self._stage("complexity", complexity_rows, self.cfg, self.fp32, self.quantized)

    # -- bench ---------------------------------------------------------------

    def bench(self):
        b = self.cfg.bench
        if not b.enabled:
            return
        self.results.latency = self._stage("bench", self._bench)

    def _bench(self):
        b = self.cfg.bench
        rows = []
        key = next(iter(self.fp32), None)
        if key is None:
            return rows
        variants = [("FP32", self.fp32[key])]
        if self.quantized:
            s_best = min(self.cfg.sparsities, key=lambda s: abs(s - 0.6)) if self.cfg.sparsities else 0.0
            qm = self.quantized.get((key[0], key[1], s_best)) or self.quantized[key[0], key[1], 0.0]
            variants.append((f"pruned{int(round(100 * s_best))}+INT8", qm))
        for name, model in variants:
            log.info("benchmarking %s", name)
            st = bench_latency(model, b.n_symbols, b.n_inferences, b.n_repeats, seed=self.cfg.seeds["bench"])
            rows.append((name, st))
        return rows

    def run(self, until="bench"):
        stop = STAGE_ORDER.index(until)
        if stop == STAGE_ORDER.index("complexity"):
            self.complexity()
            return self.results
        for name in STAGE_ORDER[: stop + 1]:
            getattr(self, name)()
        self._add_averages()
        return self.results

    def _add_averages(self):
        # with both polarizations equalized, also report their bit-weighted average
        rows = self.results.q_rows
        by_key = {}
        for r in rows:
            by_key.setdefault((r.power_dbm, r.sparsity, r.stage), {})[r.polarization] = r
        for (p, s, stage), pols in by_key.items():
            if "h" in pols and "v" in pols and "avg" not in pols:
                h, v = pols["h"], pols["v"]
                n = h.n_bits + v.n_bits
                m = QualityMetrics.from_ber((h.ber * h.n_bits + v.ber * v.n_bits) / n, n)
                rows.append(QRow(p, s, stage, m.ber, m.q_db, "avg", n))


def complexity_rows(cfg, fp32_models=None, quantized=None):
    """BoPs and serialized-size rows for FP32, INT8 and every pruned INT8 sparsity.

    Sizes come from the pipeline's models when available, otherwise from a
    randomly initialized model of the configured shape (sizes depend only on
    shapes and non-zero counts).
    """
    from .compress import ActivationRanges, prune_magnitude

    dims = list(cfg.net.dims)
    fp32_models = fp32_models or {}
    quantized = quantized or {}
    key = next(iter(fp32_models), None)
    fp32 = fp32_models[key] if key else init_model(dims, cfg.seeds["init"])
    dense_bytes = len(cx.serialize_model(replace_masks_none(fp32)))

    def qmodel(s):
        if key is not None and (key[0], key[1], s) in quantized:
            return quantized[key[0], key[1], s]
        m = prune_magnitude(fp32, s) if s > 0 else fp32
        n = len(dims)
        return quantize_ptq(m, ActivationRanges([-1.0] * n, [1.0] * n))

    rows = [cx.complexity_report("FP32", dims, cx.FP32, 0.0, dense_bytes, dense_bytes)]
    q0 = qmodel(0.0)
    rows.append(cx.complexity_report("INT8", dims, cx.INT8, 0.0,
                                     len(cx.serialize_model(q0, cx.DENSE_I8)), dense_bytes))
    for s in cfg.sparsities:
        if s <= 0:
            continue
        q = qmodel(s)
        rows.append(cx.complexity_report("pruned+INT8", dims, cx.INT8, s,
                                         len(cx.serialize_model(q, cx.BITMAP_I8)), dense_bytes))
    return rows


def replace_masks_none(model):
    m = model.copy()
    m.weights = m.effective_weights()
    m.masks = None
    return m


def run_pipeline(cfg, until="bench", resume=True, write_reports=True):
    """Run stages up to ``until`` and (optionally) emit the report files."""
    from .report import emit_report

    pipe = Pipeline(cfg, resume)
    results = pipe.run(until)
    if write_reports:
        emit_report(results, cfg.output_dir)
    return results
