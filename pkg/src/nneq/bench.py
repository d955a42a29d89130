"""Inference latency harness: warm-up, then ``n_repeats`` measures of ``n_inferences`` runs."""

import statistics
import time
import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass
class LatencyStats:
    mean_s: float
    sigma_s: float
    per_symbol_us: float
    n_repeats: int
    n_inferences: int
    n_symbols: int
    raw_s: List[float] = field(default_factory=list)


class TimerResolutionWarning(RuntimeWarning):
    pass


def _run(model, x):
    return model.predict(x) if hasattr(model, "predict") else model(x)


def bench_latency(model, n_symbols=30000, n_inferences=100, n_repeats=25, inputs=None,
                  seed=0, timer=time.perf_counter):
    """Wall-clock time per inference of ``n_symbols`` windows.

    Input generation and one warm-up inference are excluded. Each of the
    ``n_repeats`` measures times ``n_inferences`` back-to-back inferences and
    records their average; ``mean_s`` and ``sigma_s`` (population) are taken
    over those measures, which are kept in ``raw_s``.
    """
    if inputs is None:
        rng = np.random.Generator(np.random.MT19937(seed))
        inputs = rng.standard_normal((n_symbols, model.dims[0])).astype(np.float32) * 0.7
    _run(model, inputs)
    raw = []
    for _ in range(n_repeats):
        t0 = timer()
        for _ in range(n_inferences):
            _run(model, inputs)
        raw.append((timer() - t0) / n_inferences)
    mean = statistics.fmean(raw)
    sigma = statistics.pstdev(raw) if len(raw) > 1 else 0.0
    resolution = time.get_clock_info("perf_counter").resolution if timer is time.perf_counter else 0.0
    if resolution and mean < 100 * resolution:
        warnings.warn(f"timer resolution {resolution:g}s is too coarse for {mean:g}s inferences",
                      TimerResolutionWarning)
    return LatencyStats(mean, sigma, mean / n_symbols * 1e6, n_repeats, n_inferences, n_symbols, raw)
