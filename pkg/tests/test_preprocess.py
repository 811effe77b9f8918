import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import naive_moving_average, sine_record
from refspo2.preprocess import (
    PEAK,
    VALLEY,
    PpgRecord,
    Quality,
    Window,
    detect_extrema,
    detrend,
    moving_average,
    quality_check,
    segment_windows,
    window_geometry,
    window_starts,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# --- moving_average ----------------------------------------------------------


def test_moving_average_hand_example():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4, 5], 3), [1.5, 2, 3, 4, 4.5])


def test_moving_average_constant():
    np.testing.assert_array_equal(moving_average(np.full(37, 4.25), 50), np.full(37, 4.25))


def test_moving_average_impulse_matches_naive():
    x = np.zeros(101)
    x[50] = 1.0
    np.testing.assert_allclose(moving_average(x, 50), naive_moving_average(x, 50), atol=1e-15)


def test_moving_average_rejects_zero_length():
    with pytest.raises(ValueError):
        moving_average([1.0, 2.0], 0)


def test_moving_average_rejects_empty():
    with pytest.raises(ValueError):
        moving_average([], 3)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=finite), st.integers(1, 60))
def test_moving_average_properties(x, length):
    y = moving_average(x, length)
    assert y.shape == x.shape
    assert y.min() >= x.min() and y.max() <= x.max()
    np.testing.assert_allclose(y, naive_moving_average(x, length), atol=1e-9 * (1 + np.abs(x).max()))


# --- detrend -----------------------------------------------------------------


def test_detrend_constant_is_zero():
    np.testing.assert_array_equal(detrend(np.full(900, 7.0), 600.0), np.zeros(900))


def test_detrend_decomposition_identity():
    x = np.random.default_rng(0).normal(size=1500)
    np.testing.assert_allclose(detrend(x, 600.0) + moving_average(x, 600), x, atol=1e-12)


def test_detrend_sinusoid_matches_naive():
    _, x = sine_record(f=1.2, seconds=4.0, dc=0.0, amp=1.0)
    np.testing.assert_allclose(detrend(x, 600.0), x - naive_moving_average(x, 600), atol=1e-9)


def test_detrend_rejects_short_series():
    with pytest.raises(ValueError):
        detrend(np.ones(599), 600.0)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(100, 300), elements=st.floats(-10, 10)),
    st.floats(0.01, 100),
    st.floats(-1e3, 1e3),
)
def test_detrend_affine_elimination(x, a, b):
    np.testing.assert_allclose(detrend(a * x + b, 100.0), a * detrend(x, 100.0), atol=1e-9 * (1 + abs(b)))


# --- detect_extrema ------------------------------------------------------------


def _analytic_sine_extrema(f, rate, n, phase=0.0):
    """Exhaustive scan of the sampled sinusoid: every strict interior local extremum."""
    t = np.arange(n) / rate
    x = np.sin(2 * np.pi * f * t + phase)
    peaks = [i for i in range(1, n - 1) if x[i] > x[i - 1] and x[i] >= x[i + 1]]
    valleys = [i for i in range(1, n - 1) if x[i] < x[i - 1] and x[i] <= x[i + 1]]
    return x, peaks, valleys


def test_extrema_sinusoid_example():
    x, peaks, valleys = _analytic_sine_extrema(1.25, 600.0, 2400)
    out = detect_extrema(x, 600.0)
    got_p = [e.index for e in out if e.kind == PEAK]
    got_v = [e.index for e in out if e.kind == VALLEY]
    assert len(got_p) == 5 and len(got_v) in (4, 5)
    assert len(got_p) == len(peaks)
    assert np.all(np.abs(np.array(got_p) - peaks) <= 1)
    assert np.all(np.abs(np.array(got_v) - valleys[: len(got_v)]) <= 1)


def test_extrema_constant_empty():
    assert detect_extrema(np.zeros(2400), 600.0) == []


def test_extrema_rejects_short():
    with pytest.raises(ValueError):
        detect_extrema(np.zeros(100), 600.0)


def _brute_prune(indices):
    if len(indices) < 2:
        return list(indices)
    gap = 0.5 * np.median(np.diff(indices))
    kept = [indices[0]]
    for i in indices[1:]:
        if i - kept[-1] >= gap:
            kept.append(i)
    return kept


def test_extrema_spurious_peak_removed():
    rate, f = 600.0, 1.25
    x, peaks, _ = _analytic_sine_extrema(f, rate, 2400)
    true_peak = peaks[1]
    spur = true_peak + int(round(0.1 * rate / f))
    n = np.arange(x.size)
    # A notch then a spike: the true crest stays prominent and the spike is too close.
    y = x - 0.8 * np.exp(-0.5 * ((n - (true_peak + spur) / 2) / 3.0) ** 2)
    y = y + 0.3 * np.exp(-0.5 * ((n - spur) / 2.0) ** 2)
    from scipy.signal import find_peaks

    candidates, _ = find_peaks(y, prominence=0.25 * np.ptp(y))
    assert spur in candidates and true_peak in candidates
    expected = _brute_prune(list(candidates))
    assert spur not in expected
    got = [e.index for e in detect_extrema(y, rate) if e.kind == PEAK]
    assert got == expected
    assert all(min(abs(g - p) for p in peaks) <= 1 for g in got)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.8, 2.5),
    st.floats(0, 2 * np.pi),
    st.floats(1e-3, 1e4),
)
def test_extrema_sampled_sinusoids_and_scale(f, phase, scale):
    rate = 300.0
    x, peaks, valleys = _analytic_sine_extrema(f, rate, 1200, phase)
    out = detect_extrema(x, rate)
    indices = [e.index for e in out]
    kinds = [e.kind for e in out]
    assert indices == sorted(set(indices))
    assert all(a != b for a, b in zip(kinds, kinds[1:]))
    for e in out:
        ref = peaks if e.kind == PEAK else valleys
        assert min(abs(e.index - r) for r in ref) <= 1
    assert detect_extrema(scale * x, rate) == out


# --- quality_check -------------------------------------------------------------


def _window(red, ir):
    return Window(0, red, ir, np.asarray(red, float), np.asarray(ir, float))


def test_quality_scaled_copy_passes():
    red = np.sin(np.linspace(0, 20, 2400))
    w = quality_check(_window(red, 2 * red))
    assert w.quality.passed and w.quality.score == pytest.approx(1.0)


def test_quality_anticorrelated_fails():
    red = np.sin(np.linspace(0, 20, 2400))
    w = quality_check(_window(red, -red))
    assert not w.quality.passed and w.quality.score == pytest.approx(-1.0)


def test_quality_independent_noise_fails():
    rng = np.random.default_rng(11)
    w = quality_check(_window(rng.normal(size=2400), rng.normal(size=2400)))
    assert abs(w.quality.score) < 0.2 and not w.quality.passed


def test_quality_zero_variance():
    w = quality_check(_window(np.ones(2400), np.sin(np.arange(2400.0))))
    assert w.quality == Quality(False, 0.0)


# --- windowing -----------------------------------------------------------------


@pytest.mark.parametrize("n,count", [(36000, 19), (2400, 1), (4199, 1), (360000, 199)])
def test_window_count(n, count):
    assert window_geometry(600.0) == (2400, 1800)
    assert len(window_starts(n, 600.0)) == count


def test_window_rejects_short_record():
    with pytest.raises(ValueError):
        window_starts(2399, 600.0)


def test_segment_windows_slices_and_coverage(tiny_record):
    wins = segment_windows(tiny_record)
    length, hop = window_geometry(600.0)
    assert [w.start_index for w in wins] == [0, 1800, 3600]
    for w in wins:
        np.testing.assert_array_equal(w.raw_red, tiny_record.red[w.start_index : w.start_index + length])
        assert w.quality.passed
    covered = set()
    for w in wins:
        covered.update(range(w.start_index, w.start_index + length))
    assert covered == set(range(length + hop * (len(wins) - 1)))


def test_segment_windows_deterministic(tiny_record):
    a, b = segment_windows(tiny_record), segment_windows(tiny_record)
    for wa, wb in zip(a, b):
        assert wa.detrended_red.tobytes() == wb.detrended_red.tobytes()
        assert wa.red_extrema == wb.red_extrema and wa.quality == wb.quality


def test_record_validation():
    with pytest.raises(ValueError):
        PpgRecord("x", 600.0, [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        PpgRecord("x", 0.0, [1.0], [1.0])
    with pytest.raises(ValueError):
        PpgRecord("x", 600.0, [np.nan], [1.0])
    with pytest.raises(ValueError):
        PpgRecord("x", 600.0, [1.0], [1.0], site="ear")
