"""Transmitter and fiber channel simulation.

Signal chain: PRBS bits -> Gray 64-QAM -> RRC pulse shaping -> N x (SSFM span
of the Manakov equation -> EDFA with ASE noise).

Waveforms are periodic: pulse shaping is a circular convolution and the SSFM
works on the FFT grid, so no guard intervals are needed when the symbol count
is a power of two.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.constants as const

from .errors import ConfigurationError, InputError, NumericError
from .signals import DualPolWaveform, SymbolBlock

# Fibonacci LFSR feedback taps (exponents of the primitive polynomial)
PRBS_TAPS = {
    7: (7, 6),
    15: (15, 14),
    23: (23, 18),
    31: (31, 28),
    32: (32, 22, 2, 1),
}

QAM64_NORM = math.sqrt(42.0)
BITS_PER_SYMBOL = 6


@dataclass(frozen=True)
class FiberParams:
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_w_km: float = 1.2
    span_km: float = 50.0
    n_spans: int = 20
    step_km: float = 1.0
    carrier_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.alpha_db_per_km < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.span_km <= 0 or self.step_km <= 0:
            raise ConfigurationError("span_km and step_km must be positive")
        ratio = self.span_km / self.step_km
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("step_km must divide span_km")
        if self.n_spans < 0:
            raise ConfigurationError("n_spans must be >= 0")

    @property
    def steps_per_span(self):
        return int(round(self.span_km / self.step_km))

    @property
    def total_km(self):
        return self.span_km * self.n_spans

    @property
    def alpha_per_km(self):
        """Power attenuation in 1/km."""
        return self.alpha_db_per_km * math.log(10.0) / 10.0

    @property
    def beta2_s2_per_km(self):
        lam = self.carrier_wavelength_nm * 1e-9
        d = self.dispersion_ps_nm_km * 1e-3  # s/(m*km)
        return -d * lam**2 / (2 * math.pi * const.c)

    @property
    def carrier_hz(self):
        return const.c / (self.carrier_wavelength_nm * 1e-9)

    @property
    def span_loss_db(self):
        return self.alpha_db_per_km * self.span_km


SSMF = FiberParams()
TWC = FiberParams(alpha_db_per_km=0.23, dispersion_ps_nm_km=2.8, gamma_w_km=2.5)


@dataclass(frozen=True)
class TxConfig:
    baud_rate_gbd: float = 30.0
    sps: int = 8
    rolloff: float = 0.1
    mod_order: int = 64
    launch_power_dbm: float = 0.0
    prbs_order: int = 32
    seed: int = 1
    filter_span_symbols: int = 64

    def __post_init__(self):
        if self.sps < 2:
            raise ConfigurationError("sps must be >= 2")
        if not 0 <= self.rolloff <= 1:
            raise ConfigurationError("rolloff must lie in [0, 1]")
        if self.mod_order != 64:
            raise ConfigurationError("only 64-QAM is supported")
        if self.prbs_order not in PRBS_TAPS:
            raise ConfigurationError(f"unsupported PRBS order {self.prbs_order}")
        if self.filter_span_symbols % 2:
            raise ConfigurationError("filter_span_symbols must be even")

    @property
    def baud_rate_hz(self):
        return self.baud_rate_gbd * 1e9

    @property
    def sample_rate_hz(self):
        return self.baud_rate_hz * self.sps

    @property
    def launch_power_w(self):
        return 1e-3 * 10 ** (self.launch_power_dbm / 10)


@dataclass(frozen=True)
class AmplifierParams:
    """EDFA settings.

    ``gain_db=None`` means "compensate the span loss exactly". ``nf_db=None``
    (or ``-inf``) disables ASE noise.
    """

    gain_db: Optional[float] = None
    nf_db: Optional[float] = 4.5
    seed: int = 7

    def __post_init__(self):
        if self.gain_db is not None and self.gain_db < 0:
            raise ConfigurationError("gain_db must be >= 0")
        if self.noise_enabled and not self.nf_db > 0:
            raise ConfigurationError("nf_db must be > 0")

    @property
    def noise_enabled(self):
        return self.nf_db is not None and not math.isinf(self.nf_db)


def generate_prbs(order, n_bits, seed=1):
    """Output bits of a maximal-length Fibonacci LFSR.

    The register starts from the all-ones state XOR ``seed`` (masked to
    ``order`` bits); a resulting all-zero state is rejected.
    """
    if order not in PRBS_TAPS:
        raise ConfigurationError(f"unsupported PRBS order {order}")
    if n_bits <= 0:
        raise ConfigurationError("n_bits must be positive")
    mask = (1 << order) - 1
    state = (mask ^ int(seed)) & mask
    if state == 0:
        raise ConfigurationError(f"seed {seed} gives the forbidden all-zero state")
    tapmask = 0
    for t in PRBS_TAPS[order]:
        tapmask |= 1 << (t - 1)
    out = bytearray(n_bits)
    for i in range(n_bits):
        bit = (state & tapmask).bit_count() & 1
        state = ((state << 1) | bit) & mask
        out[i] = bit
    return np.frombuffer(bytes(out), dtype=np.uint8).copy()


def _gray_to_index(g):
    return g ^ (g >> 1) ^ (g >> 2)


def _index_to_gray(i):
    return i ^ (i >> 1)


def qam64_constellation():
    """The 64 points indexed by their 6-bit label (MSB first: 3 I bits, 3 Q bits)."""
    labels = np.arange(64)
    return map_qam64(((labels[:, None] >> np.arange(5, -1, -1)) & 1).ravel())


def map_qam64(bits):
    """Map bits to unit-average-power Gray-coded 64-QAM symbols.

    Each 6-bit word ``b0..b5`` is split into I (``b0 b1 b2``) and Q
    (``b3 b4 b5``) Gray codes; the Gray code ``g`` selects PAM-8 level
    ``2*gray_to_binary(g) - 7``. The word ``000000`` is the corner ``-7-7j``.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size % BITS_PER_SYMBOL:
        raise InputError("number of bits must be a multiple of 6")
    words = bits.reshape(-1, BITS_PER_SYMBOL)
    gi = words[:, 0] * 4 + words[:, 1] * 2 + words[:, 2]
    gq = words[:, 3] * 4 + words[:, 4] * 2 + words[:, 5]
    li = 2 * _gray_to_index(gi) - 7
    lq = 2 * _gray_to_index(gq) - 7
    return (li + 1j * lq) / QAM64_NORM


def demap_qam64(symbols):
    """Hard-decide symbols to bits (inverse of :func:`map_qam64`)."""
    s = np.asarray(symbols) * QAM64_NORM
    ii = np.clip(np.round((s.real + 7) / 2), 0, 7).astype(np.int64)
    iq = np.clip(np.round((s.imag + 7) / 2), 0, 7).astype(np.int64)
    gi = _index_to_gray(ii)
    gq = _index_to_gray(iq)
    shifts = np.array([2, 1, 0])
    bi = (gi[:, None] >> shifts) & 1
    bq = (gq[:, None] >> shifts) & 1
    return np.concatenate([bi, bq], axis=1).astype(np.uint8).ravel()


def rrc_taps(sps, rolloff, span_symbols=64):
    """Unit-energy root-raised-cosine impulse response with ``span*sps + 1`` taps.

    The odd length keeps the group delay an integer number of samples.
    """
    n = span_symbols * sps
    t = np.arange(-n // 2, n // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for k, x in enumerate(t):
        if x == 0:
            h[k] = 1 - b + 4 * b / np.pi
        elif b > 0 and abs(abs(4 * b * x) - 1) < 1e-12:
            h[k] = b / np.sqrt(2) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            h[k] = (np.sin(np.pi * x * (1 - b)) + 4 * b * x * np.cos(np.pi * x * (1 + b))) / (
                np.pi * x * (1 - (4 * b * x) ** 2)
            )
    return h / np.linalg.norm(h)


def rrc_group_delay(sps, span_symbols=64):
    """Group delay in samples of :func:`rrc_taps`."""
    return span_symbols * sps // 2


def circular_filter(x, taps):
    """Circular convolution ``y[n] = sum_k taps[k] x[(n-k) mod L]``."""
    x = np.asarray(x)
    n = x.size
    h = np.zeros(n, dtype=np.complex128)
    # wrap-add taps longer than the signal
    np.add.at(h, np.arange(taps.size) % n, taps)
    return np.fft.ifft(np.fft.fft(x) * np.fft.fft(h))


def shape_rrc(symbols, sps, rolloff, filter_span_symbols=64, power_w=None):
    """Upsample by ``sps`` and filter with the RRC pulse (circularly).

    The result carries the filter's group delay of :func:`rrc_group_delay`
    samples. If ``power_w`` is given the output is scaled to that mean power.
    """
    if sps < 2:
        raise ConfigurationError("sps must be >= 2")
    if filter_span_symbols % 2:
        raise ConfigurationError("filter_span_symbols must be even")
    symbols = np.asarray(symbols, dtype=np.complex128)
    up = np.zeros(symbols.size * sps, dtype=np.complex128)
    up[::sps] = symbols
    out = circular_filter(up, rrc_taps(sps, rolloff, filter_span_symbols))
    if power_w is not None:
        p = np.mean(np.abs(out) ** 2)
        if p > 0:
            out *= np.sqrt(power_w / p)
    return out


def _next_pow2(n):
    return 1 << (n - 1).bit_length()


def angular_frequencies(n, sample_rate_hz):
    return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate_hz)


def ssfm_span(w, p, manakov_factor=True):
    """Propagate one span with the symmetric split-step Fourier method.

    Each step applies half of the linear operator
    ``exp((i*beta2*w^2/2 - alpha/2) * dz/2)`` in the frequency domain, the
    Manakov phase ``exp(i * 8/9 * gamma * (|h|^2+|v|^2) * dz)`` in time and the
    second linear half. Adjacent linear halves are merged.

    Lengths that are not a power of two are zero-padded for the FFT and the
    padding is stripped afterwards; this breaks the periodicity of circularly
    shaped signals, so the pipeline always uses power-of-two lengths.
    """
    x = w.stacked()
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite samples entering ssfm_span")
    n = x.shape[1]
    nfft = _next_pow2(n)
    if nfft != n:
        x = np.pad(x, ((0, 0), (0, nfft - n)))
    omega = angular_frequencies(nfft, w.sample_rate_hz)
    dz = p.step_km
    g = p.gamma_w_km * (8.0 / 9.0 if manakov_factor else 1.0)
    lin_exponent = 1j * p.beta2_s2_per_km * omega**2 / 2 - p.alpha_per_km / 2
    half = np.exp(lin_exponent * dz / 2)
    full = half * half

    xf = np.fft.fft(x, axis=1) * half
    for k in range(p.steps_per_span):
        x = np.fft.ifft(xf, axis=1)
        power = np.abs(x[0]) ** 2 + np.abs(x[1]) ** 2
        x = x * np.exp(1j * g * power * dz)
        xf = np.fft.fft(x, axis=1)
        xf *= full if k < p.steps_per_span - 1 else half
    x = np.fft.ifft(xf, axis=1)[:, :n]
    if not np.all(np.isfinite(x)):
        raise NumericError("ssfm_span produced non-finite samples")
    return w.with_fields(x[0], x[1])


def ase_psd(a, carrier_hz):
    """One-sided ASE power spectral density per polarization in W/Hz."""
    if not a.noise_enabled:
        return 0.0
    gain = 10 ** (a.gain_db / 10)
    if gain <= 1:
        return 0.0
    nf = 10 ** (a.nf_db / 10)
    n_sp = nf * gain / (2 * (gain - 1))
    return (gain - 1) * const.h * carrier_hz * n_sp


def amplify_edfa(w, a, carrier_wavelength_nm=1550.0, rng=None):
    """Amplify by ``gain_db`` and add circular Gaussian ASE to each polarization.

    The per-polarization noise variance is ``ase_psd * sample_rate``. ``rng``
    defaults to a Mersenne-twister generator seeded with ``a.seed``.
    """
    if a.gain_db is None:
        raise ConfigurationError("amplifier gain is unset")
    if a.gain_db < 0:
        raise ConfigurationError("gain_db must be >= 0")
    g = 10 ** (a.gain_db / 10)
    h = w.h * np.sqrt(g)
    v = w.v * np.sqrt(g)
    if a.noise_enabled:
        if rng is None:
            rng = np.random.Generator(np.random.MT19937(a.seed))
        carrier = const.c / (carrier_wavelength_nm * 1e-9)
        var = ase_psd(a, carrier) * w.sample_rate_hz
        sigma = np.sqrt(var / 2)
        n = h.size
        h = h + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        v = v + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return w.with_fields(h, v)


def transmit(tx, n_symbols):
    """Generate dual-polarization symbols and the shaped launch waveform."""
    n_bits = n_symbols * BITS_PER_SYMBOL
    sym_h = map_qam64(generate_prbs(tx.prbs_order, n_bits, tx.seed))
    sym_v = map_qam64(generate_prbs(tx.prbs_order, n_bits, tx.seed + 1))
    p_pol = tx.launch_power_w / 2
    h = shape_rrc(sym_h, tx.sps, tx.rolloff, tx.filter_span_symbols, p_pol)
    v = shape_rrc(sym_v, tx.sps, tx.rolloff, tx.filter_span_symbols, p_pol)
    block = SymbolBlock(sym_h, sym_v, launch_power_dbm=tx.launch_power_dbm)
    return block, DualPolWaveform(h, v, tx.sample_rate_hz, tx.launch_power_dbm)


def simulate_link(tx, fiber, amp, n_symbols, manakov_factor=True):
    """Transmit ``n_symbols`` per polarization over ``fiber.n_spans`` amplified spans.

    Returns the transmitted :class:`SymbolBlock` (rx fields unset) and the
    received waveform before any receiver DSP.
    """
    if n_symbols <= 0:
        raise ConfigurationError("n_symbols must be positive")
    if amp.gain_db is None:
        amp = replace(amp, gain_db=fiber.span_loss_db)
    elif abs(amp.gain_db - fiber.span_loss_db) > 1e-9:
        raise ConfigurationError(
            f"amplifier gain {amp.gain_db} dB does not compensate span loss {fiber.span_loss_db} dB"
        )
    block, w = transmit(tx, n_symbols)
    rng = np.random.Generator(np.random.MT19937(amp.seed))
    for _ in range(fiber.n_spans):
        w = ssfm_span(w, fiber, manakov_factor)
        w = amplify_edfa(w, amp, fiber.carrier_wavelength_nm, rng)
    return block, w
