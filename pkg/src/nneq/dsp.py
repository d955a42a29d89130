"""Receiver DSP (CDC, matched filter, K normalization) and BER / Q metrics."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, FramingError, InputError
from .signals import SymbolBlock
from .txsim import BITS_PER_SYMBOL, angular_frequencies, circular_filter, demap_qam64, rrc_group_delay, rrc_taps

METRICS_FIELDS = ("power_dbm", "stage", "ber", "q_db", "n_bits")


@dataclass(frozen=True)
class QualityMetrics:
    ber: float
    q_db: float
    n_bits: int

    @classmethod
    def from_ber(cls, ber, n_bits):
        if 0 < ber < 0.5:
            q = ber_to_q(ber)
        elif ber == 0:
            q = math.inf
        else:
            q = -math.inf
        return cls(float(ber), q, int(n_bits))


def cdc_frequency_domain(w, fiber):
    """Invert the accumulated dispersion of ``fiber.n_spans`` spans."""
    length = fiber.total_km
    if length == 0:
        return w.with_fields(w.h.copy(), w.v.copy())
    omega = angular_frequencies(len(w), w.sample_rate_hz)
    hcd = np.exp(-1j * fiber.beta2_s2_per_km * omega**2 * length / 2)
    return w.with_fields(np.fft.ifft(np.fft.fft(w.h) * hcd), np.fft.ifft(np.fft.fft(w.v) * hcd))


def link_delay_samples(tx):
    """Total group delay of the transmit and receive RRC filters."""
    return 2 * rrc_group_delay(tx.sps, tx.filter_span_symbols)


def matched_filter_downsample(w, tx, delay_samples=None):
    """Filter both polarizations with the transmit RRC and sample at symbol instants.

    ``delay_samples`` is the accumulated filter delay to remove (by default
    :func:`link_delay_samples`). Returns ``(rx_h, rx_v)`` at one sample per symbol.
    """
    if len(w) % tx.sps:
        raise FramingError(f"waveform length {len(w)} is not a multiple of sps={tx.sps}")
    if delay_samples is None:
        delay_samples = link_delay_samples(tx)
    taps = rrc_taps(tx.sps, tx.rolloff, tx.filter_span_symbols)
    out = []
    for x in (w.h, w.v):
        y = np.roll(circular_filter(x, taps), -delay_samples)
        out.append(y[:: tx.sps])
    return out[0], out[1]


def normalize_kdsp(rx, tx):
    """Least-squares complex scale ``K = <tx, rx> / ||rx||^2``; returns ``(K*rx, K)``."""
    rx = np.asarray(rx, dtype=np.complex128)
    tx = np.asarray(tx, dtype=np.complex128)
    if rx.size != tx.size or rx.size == 0:
        raise InputError("rx and tx must be non-empty and of equal length")
    energy = np.vdot(rx, rx).real
    if energy == 0:
        raise DegenerateInputError("rx is identically zero")
    k = np.vdot(rx, tx) / energy
    return k * rx, k


def bit_errors(rx, tx):
    rx = np.asarray(rx)
    tx = np.asarray(tx)
    if rx.shape != tx.shape:
        raise InputError("rx and tx differ in length")
    return int(np.count_nonzero(demap_qam64(rx) != demap_qam64(tx)))


def compute_ber(rx, tx, mod_order=64):
    if mod_order != 64:
        raise InputError("only 64-QAM is supported")
    n = np.asarray(tx).size
    if n == 0:
        raise InputError("empty symbol sequence")
    return bit_errors(rx, tx) / (BITS_PER_SYMBOL * n)


def erfcinv(y, tol=1e-15):
    """Inverse complementary error function on (0, 2) by bisection on ``math.erfc``."""
    if not 0 < y < 2:
        raise ValueError("erfcinv domain is (0, 2)")
    if y > 1:
        return -erfcinv(2 - y, tol)
    lo, hi = 0.0, 1.0
    while math.erfc(hi) > y:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erfc(mid) > y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def ber_to_q(ber):
    """Gaussian-equivalent Q factor in dB: ``20*log10(sqrt(2) * erfcinv(2*ber))``."""
    if not 0 < ber < 0.5:
        raise ValueError(f"ber={ber} outside (0, 0.5)")
    return 20 * math.log10(math.sqrt(2) * erfcinv(2 * ber))


def q_to_ber(q_db):
    return 0.5 * math.erfc(10 ** (q_db / 20) / math.sqrt(2))


def quality(rx, tx):
    rx = np.asarray(rx)
    return QualityMetrics.from_ber(compute_ber(rx, tx), BITS_PER_SYMBOL * rx.size)


def receive(w, block, tx, fiber):
    """Linear equalization chain: CDC, matched filter, downsampling, per-polarization K.

    Returns a new :class:`SymbolBlock` carrying the normalized received symbols.
    """
    cw = cdc_frequency_domain(w, fiber)
    rx_h, rx_v = matched_filter_downsample(cw, tx)
    if rx_h.size != len(block):
        raise FramingError(f"received {rx_h.size} symbols, expected {len(block)}")
    rx_h, _ = normalize_kdsp(rx_h, block.tx_h)
    rx_v, _ = normalize_kdsp(rx_v, block.tx_v)
    return SymbolBlock(block.tx_h, block.tx_v, rx_h, rx_v, block.launch_power_dbm)


def write_metrics_csv(path, rows):
    """Write ``(power_dbm, stage, QualityMetrics)`` rows."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(METRICS_FIELDS)
        for power, stage, m in rows:
            wr.writerow([power, stage, repr(m.ber), repr(m.q_db), m.n_bits])
