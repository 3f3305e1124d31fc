import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from combphase.errors import DegenerateInputError, InputShapeError
from combphase.metrics import (
    compute_evm_snr_ber,
    compute_gmi,
    metrics_report,
    phase_crosscorr,
    phase_mse,
)
from combphase.sigcore import Constellation, PhaseTrace, bits_to_indices, map_qam, random_bits, wiener_phase

from oracles import gmi_brute_force, qpsk_ber, qpsk_gmi_per_pol


def _tx(order, n, seed=0, npol=2):
    const = Constellation.qam(order)
    bits = [random_bits(n * const.bits_per_symbol, seed, "m", p) for p in range(npol)]
    return const, bits, [map_qam(b, const) for b in bits]


def _noise(shape, snr_db, seed):
    rng = np.random.default_rng(seed)
    s = np.sqrt(10 ** (-snr_db / 10) / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# --------------------------------------------------------------------------
# GMI


def test_gmi_noiseless_pm64qam_is_12_bits():
    const, bits, sym = _tx(64, 20_000)
    assert compute_gmi(sym, bits, const) == pytest.approx(12.0, abs=0.01)


@pytest.mark.parametrize("snr_db", [0.0, 5.0, 10.0])
def test_gmi_qpsk_matches_gauss_hermite(snr_db):
    n = 500_000
    const, bits, sym = _tx(4, n, seed=1)
    rx = [s + _noise(n, snr_db, (p, 3)) for p, s in enumerate(sym)]
    assert compute_gmi(rx, bits, const) == pytest.approx(2 * qpsk_gmi_per_pol(snr_db), abs=0.02)


def test_gmi_matches_brute_force_sums():
    n = 1500
    const, bits, sym = _tx(16, n, seed=2, npol=1)
    y = sym[0] + _noise(n, 12.0, 4)
    labels = bits_to_indices(bits[0], const)
    # the oracle gets gain and variance fitted on its own, by plain means
    x = const.points[labels]
    h = np.real(np.sum(np.conj(x) * y)) / np.sum(np.abs(x) ** 2)
    var = np.mean(np.abs(y - h * x) ** 2)
    ref = gmi_brute_force(y, labels, h * const.points, const.bit_labels, var)
    assert compute_gmi(y, bits[0], const) == pytest.approx(ref, abs=1e-9)


def test_gmi_of_unrelated_symbols_is_near_zero():
    const, bits, _ = _tx(64, 50_000, seed=3)
    _, _, other = _tx(64, 50_000, seed=4)
    assert compute_gmi(other, bits, const) < 0.05


def test_gmi_monotone_in_snr():
    n = 30_000
    const, bits, sym = _tx(64, n, seed=5)
    unit = [_noise(n, 0.0, (p, 6)) for p in range(2)]
    prev = np.inf
    for snr_db in np.arange(26.0, 4.0, -2.0):
        scale = 10 ** (-snr_db / 20)
        g = compute_gmi([s + scale * u for s, u in zip(sym, unit)], bits, const)
        assert g <= prev + 0.02
        prev = g


@settings(max_examples=25, deadline=None)
@given(order=st.sampled_from([4, 16, 64]), snr_db=st.floats(-5, 40), seed=st.integers(0, 999))
def test_gmi_bounded_by_label_bits(order, snr_db, seed):
    n = 2000
    const, bits, sym = _tx(order, n, seed=seed)
    rx = [s + _noise(n, snr_db, (seed, p)) for p, s in enumerate(sym)]
    g = compute_gmi(rx, bits, const)
    assert 0.0 <= g <= 2 * const.bits_per_symbol
    if snr_db < 15:
        # above that the QPSK loss underflows double precision
        assert g < 2 * const.bits_per_symbol


def test_gmi_input_errors():
    const, bits, sym = _tx(16, 100)
    with pytest.raises(InputShapeError):
        compute_gmi([sym[0], sym[1][:-1]], bits, const)
    with pytest.raises(InputShapeError):
        compute_gmi(sym[0][:-1], bits[0], const)
    with pytest.raises(InputShapeError):
        compute_gmi(sym, bits, const, min_bits=10**5)
    with pytest.raises(InputShapeError):
        compute_gmi([sym[0] * np.nan, sym[1]], bits, const)


# --------------------------------------------------------------------------
# EVM, SNR, BER


def test_noiseless_report():
    const, bits, sym = _tx(64, 4096)
    rep = metrics_report(sym, bits, const)
    assert rep.evm_db == -np.inf and rep.ber == 0.0
    assert rep.gmi_bits_per_4d == pytest.approx(12.0, abs=0.01)
    assert rep.ngmi == pytest.approx(1.0, abs=1e-3)


def test_qpsk_ber_matches_q_function():
    n = 1_000_000
    const, bits, sym = _tx(4, n, seed=7, npol=1)
    q = compute_evm_snr_ber(sym[0] + _noise(n, 10.0, 8), bits[0], const)
    assert q["ber"] == pytest.approx(qpsk_ber(10.0), rel=0.2)


def test_snr_estimate_at_20db():
    n = 200_000
    const, bits, sym = _tx(64, n, seed=9)
    rx = [s + _noise(n, 20.0, (p, 10)) for p, s in enumerate(sym)]
    q = compute_evm_snr_ber(rx, bits, const)
    assert q["snr_db"] == pytest.approx(20.0, abs=0.2)
    assert 0.0 <= q["ber"] <= 0.5


# --------------------------------------------------------------------------
# phase correlation


FS = 20e9


def test_identical_traces_correlate_exactly():
    tr = wiener_phase(1e5, 10_000, 1 / FS, 1)
    res = phase_crosscorr(tr, tr, 50)
    assert res.lag0_coefficient == 1.0
    assert np.all(np.abs(res.coefficients) <= 1 + 1e-12)


def test_independent_wiener_traces_decorrelate():
    rho = np.array([phase_crosscorr(wiener_phase(1e5, 100_000, 1 / FS, (s, "a")),
                                    wiener_phase(1e5, 100_000, 1 / FS, (s, "b")),
                                    0).lag0_coefficient for s in range(100)])
    assert np.median(np.abs(rho)) < 0.3
    assert abs(rho.mean()) < 3 * rho.std() / np.sqrt(len(rho))


def _mixed_correlations(ratio, reps=100, n=100_000):
    # independent parts are white and scaled to the realized variance of the
    # detrended common path, so each realization has variance ratio `ratio`
    out = []
    for s in range(reps):
        common = wiener_phase(1e5, n, 1 / FS, (s, "c")).values
        t = np.arange(n) - (n - 1) / 2
        resid = common - common.mean() - t * np.dot(t, common) / np.dot(t, t)
        scale = np.sqrt(ratio * np.mean(resid**2))
        rng = np.random.default_rng(s)
        a = common + scale * rng.standard_normal(n)
        b = common + scale * rng.standard_normal(n)
        out.append(phase_crosscorr(PhaseTrace(a, FS), PhaseTrace(b, FS), 0).lag0_coefficient)
    return np.array(out)


def test_common_phase_correlation_follows_mixing_formula():
    r = 1e-4
    rho = _mixed_correlations(r)
    assert np.max(np.abs(rho - 1 / (1 + r))) < 2e-6


def test_common_phase_correlation_above_9999():
    assert np.mean(_mixed_correlations(0.5e-4)) > 0.9999


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), lag=st.integers(1, 40))
def test_crosscorr_symmetric_under_swap(seed, lag):
    a = wiener_phase(1e5, 2000, 1 / FS, (seed, "a"))
    b = PhaseTrace(np.roll(a.values, lag) + wiener_phase(1e4, 2000, 1 / FS, (seed, "b")).values, FS)
    ab, ba = phase_crosscorr(a, b, 50), phase_crosscorr(b, a, 50)
    assert np.allclose(ab.coefficients, ba.coefficients[::-1], rtol=0, atol=1e-12)
    assert np.allclose(ab.lags, -ab.lags[::-1])


def test_crosscorr_errors():
    flat = PhaseTrace(np.zeros(100), FS)
    ramp = PhaseTrace(np.linspace(0, 1, 100), FS)
    with pytest.raises(DegenerateInputError):
        phase_crosscorr(flat, wiener_phase(1e5, 100, 1 / FS, 1), 5)
    # a pure ramp is zero after detrending
    with pytest.raises(DegenerateInputError):
        phase_crosscorr(ramp, wiener_phase(1e5, 100, 1 / FS, 1), 5)
    with pytest.raises(InputShapeError):
        phase_crosscorr(ramp, PhaseTrace(np.zeros(101), FS), 5)


def test_half_width_of_ou_like_correlation():
    rng = np.random.default_rng(0)
    x = np.zeros(200_000)
    a = np.exp(-1 / 20)
    w = rng.standard_normal(len(x))
    for k in range(1, len(x)):
        x[k] = a * x[k - 1] + w[k]
    res = phase_crosscorr(PhaseTrace(x, 1.0), PhaseTrace(x, 1.0), 100, remove_trend=False)
    # autocorrelation exp(-|k|/20) halves at 20 ln 2
    assert res.half_width() == pytest.approx(20 * np.log(2), rel=0.1)


def test_phase_mse_ignores_quarter_turns_and_offset():
    rng = np.random.default_rng(1)
    truth = np.cumsum(rng.normal(0, 0.01, 5000))
    err = rng.normal(0, 0.05, 5000)
    est = truth + err + 0.3 + (np.pi / 2) * rng.integers(-2, 3, 5000)
    assert phase_mse(est, truth) == pytest.approx(np.mean((err - err.mean()) ** 2), rel=0.02)
