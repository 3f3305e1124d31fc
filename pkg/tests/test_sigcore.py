import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from combphase.errors import ConfigError, InputShapeError
from combphase.sigcore import (
    Constellation,
    Frame,
    PhaseTrace,
    demap_hard,
    map_qam,
    random_bits,
    rng_stream,
    rrc_shape,
    rrc_taps,
    wiener_phase,
)

from oracles import qpsk_ber, rrc_by_quadrature, square_qam_points, wiener_variance

ORDERS = [4, 16, 64, 256]


# --------------------------------------------------------------------------
# constellation and mapping


def test_qpsk_zero_bits_map_to_first_quadrant():
    const = Constellation.qam(4)
    assert map_qam(np.array([0, 0]), const)[0] == pytest.approx((1 + 1j) / np.sqrt(2))


def test_64qam_has_eight_levels_per_axis():
    pts = Constellation.qam(64).points
    assert len(np.unique(np.round(pts.real, 12))) == 8
    assert len(np.unique(np.round(pts.imag, 12))) == 8


@pytest.mark.parametrize("order", ORDERS)
def test_alphabet_matches_square_grid(order):
    pts = Constellation.qam(order).points
    ref = square_qam_points(order)
    assert np.allclose(np.sort_complex(pts), np.sort_complex(ref))


def test_random_bits_give_unit_energy():
    const = Constellation.qam(64)
    s = map_qam(random_bits(6 * 100_000, 0, "energy"), const)
    assert abs(np.mean(np.abs(s) ** 2) - 1.0) < 0.02


@pytest.mark.parametrize("order", ORDERS)
def test_gray_neighbours_differ_in_one_bit(order):
    const = Constellation.qam(order)
    step = np.min(np.abs(np.diff(np.unique(np.round(const.points.real, 12)))))
    for i, p in enumerate(const.points):
        d = np.abs(const.points - p)
        for j in np.flatnonzero(np.isclose(d, step)):
            assert np.sum(const.bit_labels[i] != const.bit_labels[j]) == 1


def test_map_rejects_partial_symbol():
    with pytest.raises(InputShapeError):
        map_qam(np.zeros(7, dtype=np.uint8), Constellation.qam(64))


@pytest.mark.parametrize("order", [2, 8, 32, 12])
def test_non_square_order_rejected(order):
    with pytest.raises(ConfigError):
        Constellation.qam(order)


@settings(max_examples=40, deadline=None)
@given(order=st.sampled_from(ORDERS), seed=st.integers(0, 2**32 - 1), n=st.integers(1, 200))
def test_map_demap_round_trip(order, seed, n):
    const = Constellation.qam(order)
    bits = np.random.default_rng(seed).integers(0, 2, n * const.bits_per_symbol).astype(np.uint8)
    assert np.array_equal(demap_hard(map_qam(bits, const), const), bits)


def test_midpoint_tie_goes_to_lowest_index():
    const = Constellation.qam(16)
    for i, j in [(0, 1), (0, 4), (5, 7), (10, 14)]:
        a, b = const.points[i], const.points[j]
        mid = 0.5 * (a + b)
        d = np.abs(const.points - mid)
        tied = np.flatnonzero(np.isclose(d, d.min()))
        assert const.nearest_index(np.array([mid]))[0] == tied.min()


def test_qpsk_ber_matches_q_function():
    const = Constellation.qam(4)
    n = 1_000_000
    bits = random_bits(2 * n, 1, "ber")
    s = map_qam(bits, const)
    rng = np.random.default_rng(2)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.1 / 2)
    ber = np.mean(demap_hard(s + noise, const) != bits)
    assert abs(ber / qpsk_ber(10.0) - 1) < 0.2


def test_slice_agrees_with_nearest_index():
    const = Constellation.qam(64)
    rng = np.random.default_rng(3)
    z = 1.4 * (rng.standard_normal(5000) + 1j * rng.standard_normal(5000))
    assert np.allclose(const.slice(z), const.points[const.nearest_index(z)])


# --------------------------------------------------------------------------
# pulse shaping


def test_rrc_taps_match_fourier_integral():
    sps, span, beta = 4, 16, 0.25
    taps = rrc_taps(beta, sps, span)
    t = (np.arange(len(taps)) - (len(taps) - 1) / 2) / sps
    ref = rrc_by_quadrature(t, beta)
    ref /= np.sqrt(np.sum(ref**2))
    assert np.max(np.abs(taps - ref)) < 1e-6


def test_rrc_unit_energy_and_symmetry():
    taps = rrc_taps(0.05, 3, 64)
    assert len(taps) == 64 * 3 + 1
    assert np.sum(taps**2) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(taps, taps[::-1])


def test_matched_cascade_isi_below_40db():
    sps = 4
    taps = rrc_taps(0.05, sps, 64)
    full = np.convolve(taps, taps)
    c = len(full) // 2
    at_symbols = full[c % sps::sps]
    centre = np.argmax(np.abs(at_symbols))
    others = np.delete(at_symbols, centre)
    assert 20 * np.log10(np.max(np.abs(others)) / np.abs(at_symbols[centre])) < -40


def test_short_span_rejected():
    with pytest.raises(ConfigError):
        rrc_taps(0.05, 2, 4)


def test_impulse_gives_taps():
    sps, span = 3, 64
    taps = rrc_taps(0.05, sps, span)
    sym = np.zeros(2 * span + 1, complex)
    sym[span] = 1.0
    out = rrc_shape(sym, 0.05, sps, span).samples_x
    c = span * sps
    half = (len(taps) - 1) // 2
    assert np.allclose(out[c - half:c + half + 1], taps, atol=1e-15)


def test_occupied_bandwidth_21ghz():
    const = Constellation.qam(64)
    sym = map_qam(random_bits(6 * (1 << 15), 4, "bw"), const)
    fr = rrc_shape(sym, 0.05, 3, 64, symbol_rate=20e9)
    psd = np.abs(np.fft.fft(fr.samples_x)) ** 2
    f = np.fft.fftfreq(len(psd), 1 / fr.sample_rate)
    order = np.argsort(np.abs(f))
    cum = np.cumsum(psd[order]) / psd.sum()
    occupied = 2 * np.abs(f[order][np.searchsorted(cum, 0.9999)])
    assert occupied == pytest.approx(21e9, rel=0.02)
    assert np.sum(psd[np.abs(f) > 10.5e9 * 1.01]) / psd.sum() < 1e-4


# --------------------------------------------------------------------------
# phase noise and random streams


def test_zero_linewidth_is_flat():
    tr = wiener_phase(0.0, 1000, 50e-12, 1)
    assert np.all(tr.values == 0)


def test_wiener_variance_grows_linearly():
    lw, dt, n, reps = 100e3, 50e-12, 1_000_000, 200
    lags = np.array([10, 100, 1000, 10_000, 100_000])
    acc = np.zeros(len(lags))
    count = np.zeros(len(lags))
    for r in range(reps):
        v = wiener_phase(lw, n, dt, (7, r)).values
        for i, lag in enumerate(lags):
            # non-overlapping windows restart the process, so each one is a draw of phi(lag*dt)
            d = v[lag::lag] - v[:-lag:lag][:len(v[lag::lag])]
            acc[i] += np.sum(d**2)
            count[i] += len(d)
    var = acc / count
    assert np.all(np.abs(var / wiener_variance(lw, lags * dt) - 1) < 0.1)


def test_wiener_deterministic():
    a = wiener_phase(1e5, 5000, 1e-10, 42)
    b = wiener_phase(1e5, 5000, 1e-10, 42)
    assert np.array_equal(a.values, b.values)
    c = wiener_phase(1e5, 5000, 1e-10, 43)
    assert not np.array_equal(a.values, c.values)


def test_wiener_increments_uncorrelated():
    v = wiener_phase(1e5, 1_000_000, 50e-12, 9).values
    d = np.diff(v)
    d -= d.mean()
    var = np.dot(d, d)
    for lag in (1, 2, 5, 20):
        assert abs(np.dot(d[:-lag], d[lag:]) / var) < 0.01


@settings(max_examples=30, deadline=None)
@given(seed=st.one_of(st.integers(-2**40, 2**40), st.tuples(st.integers(-5, 5), st.text(max_size=4))),
       label=st.one_of(st.integers(0, 100), st.text(max_size=6)))
def test_rng_stream_reproducible(seed, label):
    a = rng_stream(seed, label).standard_normal(8)
    b = rng_stream(seed, label).standard_normal(8)
    assert np.array_equal(a, b)


def test_rng_streams_are_distinct():
    seeds = (0, 1, -1, (0, 1), (1, 0), (0, 0))
    labels = ((), (0,), (1,), ("0",), (0, 0), (1, 0))
    draws = {int(rng_stream(s, *lab).integers(0, 2**63)) for s in seeds for lab in labels}
    assert len(draws) == len(seeds) * len(labels)


def test_scalar_seed_equals_one_tuple():
    assert rng_stream(5, "a").random() == rng_stream((5,), "a").random()


def test_frame_rejects_mismatched_pols():
    with pytest.raises(InputShapeError):
        Frame(np.zeros(4), np.zeros(5), 1.0)


def test_phase_trace_arithmetic_needs_same_grid():
    a = PhaseTrace(np.zeros(4), 1.0)
    with pytest.raises(InputShapeError):
        a + PhaseTrace(np.zeros(4), 2.0)
