import math

import numpy as np
import pytest
import scipy.constants as const

from nneq.errors import ConfigurationError, InputError, NumericError
from nneq.signals import DualPolWaveform
from nneq.txsim import (
    SSMF,
    AmplifierParams,
    FiberParams,
    TxConfig,
    amplify_edfa,
    ase_psd,
    demap_qam64,
    generate_prbs,
    map_qam64,
    qam64_constellation,
    rrc_group_delay,
    rrc_taps,
    shape_rrc,
    simulate_link,
    ssfm_span,
    transmit,
)

FS = 240e9


def reference_lfsr(order, taps, state, n):
    """Bit-by-bit shift register with an explicit list of cells."""
    cells = [(state >> k) & 1 for k in range(order)]  # cells[k] is bit k
    out = []
    for _ in range(n):
        fb = 0
        for t in taps:
            fb ^= cells[t - 1]
        cells = [fb] + cells[:-1]
        out.append(fb)
    return np.array(out, dtype=np.uint8)


# ---------------------------------------------------------------- PRBS


def test_prbs_deterministic():
    a = generate_prbs(32, 12, seed=1)
    b = generate_prbs(32, 12, seed=1)
    assert a.tolist() == b.tolist()
    assert set(a.tolist()) <= {0, 1}


@pytest.mark.parametrize("order,taps", [(7, (7, 6)), (15, (15, 14)), (32, (32, 22, 2, 1))])
def test_prbs_matches_reference_register(order, taps):
    seed = 5
    state = (((1 << order) - 1) ^ seed) & ((1 << order) - 1)
    assert generate_prbs(order, 300, seed).tolist() == reference_lfsr(order, taps, state, 300).tolist()


def test_prbs7_period_is_127():
    bits = generate_prbs(7, 254, seed=3)
    assert bits[:127].tolist() == bits[127:].tolist()
    # 127 is prime, so the only shorter period would be 1
    assert 0 < bits[:127].sum() < 127
    assert bits[:127].sum() == 64  # an m-sequence has 2^(n-1) ones


def test_prbs15_full_period():
    n = 2**15 - 1
    bits = generate_prbs(15, 2 * n, seed=9)
    assert bits[:n].tolist() == bits[n:].tolist()
    windows = np.zeros(n, dtype=np.int64)
    ext = np.concatenate([bits, bits[:15]])
    for k in range(15):
        windows |= ext[k : k + n].astype(np.int64) << k
    assert np.unique(windows).size == n


def test_prbs32_no_repetition_in_twelve_datasets():
    n = 2**18 * 12
    bits = generate_prbs(32, n, seed=17).astype(np.uint64)
    m = n - 31
    states = np.zeros(m, dtype=np.uint64)
    for k in range(32):
        states |= bits[k : k + m] << np.uint64(k)
    # a repeated 32-bit register state would make the sequence periodic
    assert np.unique(states).size == m


def test_prbs_errors():
    with pytest.raises(ConfigurationError):
        generate_prbs(9, 10)
    with pytest.raises(ConfigurationError):
        generate_prbs(7, 0)
    with pytest.raises(ConfigurationError):
        generate_prbs(7, 10, seed=127)  # all-ones XOR all-ones


# ---------------------------------------------------------------- 64-QAM


def test_qam_corner_point():
    assert map_qam64([0, 0, 0, 0, 0, 0])[0] == pytest.approx((-7 - 7j) / math.sqrt(42))


def test_qam_table_is_gray():
    pts = qam64_constellation()
    assert np.unique(np.round(pts, 12)).size == 64
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-14)
    d = 2 / math.sqrt(42)
    for a in range(64):
        for b in range(a + 1, 64):
            if abs(abs(pts[a] - pts[b]) - d) < 1e-9:
                assert bin(a ^ b).count("1") == 1


def test_qam_roundtrip_and_power():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, 6 * 20000)
    s = map_qam64(bits)
    assert demap_qam64(s).tolist() == bits.tolist()
    assert np.mean(np.abs(s) ** 2) == pytest.approx(1.0, abs=1e-2)


def test_qam_rejects_partial_words():
    with pytest.raises(InputError):
        map_qam64([0, 1, 0])


# ---------------------------------------------------------------- RRC


def test_rrc_impulse_response():
    sym = np.zeros(80, dtype=complex)
    sym[0] = 1
    out = shape_rrc(sym, 8, 0.1, 64)
    taps = rrc_taps(8, 0.1, 64)
    np.testing.assert_allclose(out[: taps.size], taps, atol=1e-12)
    np.testing.assert_allclose(out[taps.size :], 0, atol=1e-12)


def test_rrc_cascade_is_nyquist():
    taps = rrc_taps(8, 0.1, 64)
    rc = np.convolve(taps, taps)
    center = rc.size // 2
    assert center == 2 * rrc_group_delay(8, 64)
    assert rc[center] == pytest.approx(1.0, rel=1e-12)
    isi = np.concatenate([rc[center + 8 :: 8], rc[center - 8 :: -8]])
    assert np.max(np.abs(isi)) < 1e-3


def test_rrc_constant_stream_is_bandlimited():
    sps, beta = 8, 0.1
    out = shape_rrc(np.full(512, 0.3 + 0.2j), sps, beta)
    spec = np.abs(np.fft.fft(out)) ** 2
    f = np.fft.fftfreq(out.size, d=1 / sps)  # in units of the baud rate
    outside = spec[np.abs(f) > (1 + beta) / 2].sum()
    assert outside / spec.sum() < 1e-6  # truncation leakage of the finite filter
    assert spec[0] / spec.sum() > 0.999


def test_rrc_power_scaling():
    s = map_qam64(generate_prbs(15, 6 * 256, 1))
    out = shape_rrc(s, 8, 0.1, power_w=2e-3)
    assert np.mean(np.abs(out) ** 2) == pytest.approx(2e-3, rel=1e-12)


# ---------------------------------------------------------------- SSFM


def _wave(h, v=None):
    return DualPolWaveform(h, np.zeros_like(h) if v is None else v, FS)


def test_ssfm_zero_in_zero_out():
    w = _wave(np.zeros(1024, dtype=complex))
    out = ssfm_span(w, SSMF)
    assert np.all(out.h == 0) and np.all(out.v == 0)


def test_ssfm_dispersion_tone_phase():
    p = FiberParams(alpha_db_per_km=0, gamma_w_km=0, span_km=50, n_spans=1)
    n = 4096
    k = 171
    t = np.arange(n) / FS
    omega = 2 * np.pi * k * FS / n
    x = 1e-2 * np.exp(1j * omega * t)
    out = ssfm_span(_wave(x), p)
    expected = np.angle(np.exp(1j * p.beta2_s2_per_km * omega**2 * p.span_km / 2))
    phase = np.angle(out.h / x)
    assert np.max(np.abs(np.angle(np.exp(1j * (phase - expected))))) < 1e-6


def test_ssfm_spm_phase():
    p = FiberParams(alpha_db_per_km=0, dispersion_ps_nm_km=0, gamma_w_km=1.2, span_km=50)
    power = 5e-3
    out = ssfm_span(_wave(np.full(256, np.sqrt(power), dtype=complex)), p)
    expected = 8 / 9 * p.gamma_w_km * power * p.span_km
    assert np.max(np.abs(np.angle(out.h) - expected)) < 1e-6
    no_factor = ssfm_span(_wave(np.full(256, np.sqrt(power), dtype=complex)), p, manakov_factor=False)
    assert np.angle(no_factor.h[0]) == pytest.approx(p.gamma_w_km * power * p.span_km, abs=1e-9)


def _random_wave(n=2048, power=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(power / 2)
    v = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(power / 2)
    return DualPolWaveform(h, v, FS)


def test_ssfm_energy_conservation():
    p = FiberParams(alpha_db_per_km=0, gamma_w_km=1.2)
    w = _random_wave(power=1e-2)
    out = ssfm_span(w, p)
    assert abs(out.energy - w.energy) / w.energy < 1e-9


def test_ssfm_linear_without_nonlinearity():
    p = FiberParams(gamma_w_km=0)
    w = _random_wave()
    a = 2.5 - 0.5j
    lhs = ssfm_span(w.with_fields(a * w.h, a * w.v), p)
    rhs = ssfm_span(w, p)
    err = np.linalg.norm(lhs.stacked() - a * rhs.stacked()) / np.linalg.norm(lhs.stacked())
    assert err < 1e-12


def test_ssfm_polarization_symmetry():
    w = _random_wave(power=1e-2, seed=4)
    out = ssfm_span(w, SSMF)
    swapped = ssfm_span(w.with_fields(w.v, w.h), SSMF)
    np.testing.assert_allclose(swapped.h, out.v, atol=1e-15)
    np.testing.assert_allclose(swapped.v, out.h, atol=1e-15)


def test_ssfm_loss():
    p = FiberParams(gamma_w_km=0)
    w = _random_wave()
    out = ssfm_span(w, p)
    assert out.energy / w.energy == pytest.approx(10 ** (-p.span_loss_db / 10), rel=1e-12)


def test_ssfm_rejects_non_finite():
    h = np.zeros(64, dtype=complex)
    h[3] = np.nan
    with pytest.raises(NumericError):
        ssfm_span(_wave(h), SSMF)


def test_ssfm_pads_non_power_of_two():
    p = FiberParams(gamma_w_km=0, alpha_db_per_km=0, dispersion_ps_nm_km=0)
    w = _random_wave(n=1000)
    out = ssfm_span(w, p)
    assert len(out) == 1000
    np.testing.assert_allclose(out.h, w.h, atol=1e-15)


def test_fiber_param_invariants():
    with pytest.raises(ConfigurationError):
        FiberParams(span_km=50, step_km=3)
    with pytest.raises(ConfigurationError):
        FiberParams(alpha_db_per_km=-0.1)
    assert SSMF.beta2_s2_per_km == pytest.approx(-21.68e-27, rel=1e-3)


# ---------------------------------------------------------------- EDFA


def test_edfa_noise_disabled_is_pure_gain():
    w = _random_wave()
    for nf in (None, -math.inf):
        out = amplify_edfa(w, AmplifierParams(gain_db=10, nf_db=nf))
        np.testing.assert_allclose(out.h, w.h * np.sqrt(10), rtol=1e-14)


def test_edfa_noise_variance_matches_closed_form():
    n = 10**6
    w = DualPolWaveform(np.zeros(n, complex), np.zeros(n, complex), FS)
    a = AmplifierParams(gain_db=10, nf_db=4.5, seed=11)
    out = amplify_edfa(w, a)
    g, nf = 10.0, 10 ** 0.45
    nu = const.c / 1550e-9
    n_sp = nf * g / (2 * (g - 1))
    expected = (g - 1) * const.h * nu * n_sp * FS
    assert ase_psd(a, nu) * FS == pytest.approx(expected, rel=1e-12)
    for x in (out.h, out.v):
        assert np.var(x) == pytest.approx(expected, rel=0.02)
        assert abs(np.mean(x.real**2) - np.mean(x.imag**2)) / expected < 0.02


def test_edfa_seed_reuse():
    w = _random_wave(n=512)
    a = AmplifierParams(gain_db=10, seed=3)
    assert np.array_equal(amplify_edfa(w, a).h, amplify_edfa(w, a).h)


def test_edfa_rejects_negative_gain():
    with pytest.raises(ConfigurationError):
        AmplifierParams(gain_db=-1)


# ---------------------------------------------------------------- link


def test_link_zero_spans_returns_launch_waveform():
    tx = TxConfig(launch_power_dbm=1)
    fiber = FiberParams(n_spans=0)
    block, w = simulate_link(tx, fiber, AmplifierParams(), 256)
    ref_block, ref = transmit(tx, 256)
    assert np.array_equal(w.h, ref.h) and np.array_equal(w.v, ref.v)
    assert np.array_equal(block.tx_h, ref_block.tx_h)
    assert w.power_w == pytest.approx(tx.launch_power_w, rel=1e-12)


def test_link_linear_matches_allpass_filter():
    tx = TxConfig(launch_power_dbm=0)
    fiber = FiberParams(gamma_w_km=0, n_spans=3, span_km=50, step_km=5)
    _, w = simulate_link(tx, fiber, AmplifierParams(nf_db=None), 512)
    _, w0 = transmit(tx, 512)
    omega = 2 * np.pi * np.fft.fftfreq(len(w0), 1 / tx.sample_rate_hz)
    hd = np.exp(1j * fiber.beta2_s2_per_km * omega**2 * fiber.total_km / 2)
    ref = np.fft.ifft(np.fft.fft(w0.h) * hd)
    assert np.linalg.norm(w.h - ref) / np.linalg.norm(ref) < 1e-9


def test_link_is_deterministic():
    tx = TxConfig()
    fiber = FiberParams(n_spans=2, span_km=10)
    a = simulate_link(tx, fiber, AmplifierParams(seed=5), 128)[1]
    b = simulate_link(tx, fiber, AmplifierParams(seed=5), 128)[1]
    assert np.array_equal(a.h, b.h) and np.array_equal(a.v, b.v)


def test_link_gain_must_match_span_loss():
    with pytest.raises(ConfigurationError):
        simulate_link(TxConfig(), FiberParams(n_spans=1), AmplifierParams(gain_db=3), 64)


def test_polarizations_carry_independent_data():
    block, _ = transmit(TxConfig(), 1024)
    assert not np.array_equal(block.tx_h, block.tx_v)
