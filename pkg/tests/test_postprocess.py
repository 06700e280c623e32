import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_track
from strukt.annotations import SegmentTrack, targets_from_track
from strukt.postprocess import PeakPickConfig, peak_pick, reconstruct_track

RATE = 10.0


def test_single_impulse():
    x = np.zeros(200)
    x[57] = 1.0
    np.testing.assert_allclose(peak_pick(x, RATE), [5.7])


def test_constant_curve_has_no_peaks():
    assert peak_pick(np.full(100, 0.4), RATE).size == 0


def test_close_peaks_keep_higher():
    x = np.zeros(200)
    x[50], x[60] = 0.9, 1.0
    np.testing.assert_allclose(peak_pick(x, RATE, PeakPickConfig(max_window=0.5)), [6.0])


def test_equal_close_peaks_keep_earlier():
    x = np.zeros(200)
    x[50] = x[60] = 1.0
    np.testing.assert_allclose(peak_pick(x, RATE, PeakPickConfig(max_window=0.5)), [5.0])


def test_plateau_is_not_strict_max():
    x = np.zeros(100)
    x[40:42] = 1.0
    assert peak_pick(x, RATE).size == 0


def test_delta_threshold():
    x = np.full(100, 0.5)
    x[50] = 0.52
    assert peak_pick(x, RATE).size == 0
    assert peak_pick(x, RATE, PeakPickConfig(delta=0.0)).size == 1


def test_config_validation():
    with pytest.raises(ValueError):
        PeakPickConfig(max_window=0)
    with pytest.raises(ValueError):
        PeakPickConfig(delta=-0.1)


_curves = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=150)


@settings(max_examples=80, deadline=None)
@given(_curves, st.floats(0.5, 6.0))
def test_property_separation(vals, sep):
    cfg = PeakPickConfig(max_window=0.3, mean_window=1.0, delta=0.0, min_separation=sep)
    t = peak_pick(np.array(vals), RATE, cfg)
    assert np.all(np.diff(t) > 0)
    assert np.all(np.diff(t) >= sep - 1e-9)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=150), st.integers(-50, 50))
def test_property_shift_invariance(vals, c):
    # integer-valued curves keep the arithmetic exact under the shift
    x = np.array(vals, dtype=float) / 64
    cfg = PeakPickConfig(max_window=0.3, mean_window=1.0, delta=0.0625, min_separation=0.5)
    np.testing.assert_array_equal(peak_pick(x, RATE, cfg), peak_pick(x + c / 4, RATE, cfg))


@settings(max_examples=80, deadline=None)
@given(_curves, st.integers(-6, 6))
def test_property_positive_scaling(vals, k):
    # powers of two scale exactly, so only the comparison structure matters
    x = np.array(vals)
    cfg = PeakPickConfig(max_window=0.3, mean_window=1.0, delta=0.0, min_separation=0.5)
    np.testing.assert_array_equal(peak_pick(x, RATE, cfg), peak_pick(x * 2.0 ** k, RATE, cfg))


# ----------------------------------------------------------- reconstruction


def _onehot(labels, C):
    return np.eye(C)[labels]


def test_no_boundaries_majority():
    logits = _onehot([0, 1, 1, 2, 1], 3)
    tr = reconstruct_track([], logits, 1.0, 5.0)
    assert tr.segments == ((0.0, 5.0, 1),)


def test_tie_goes_to_lower_class():
    logits = _onehot([2, 2, 1, 1], 3)
    tr = reconstruct_track([], logits, 1.0, 4.0)
    assert tr.segments[0].label == 1


def test_empty_segment_merged():
    logits = _onehot([0] * 11 + [1] * 9, 2)
    # [1.01, 1.05) holds no frame and folds into its predecessor; 2.0 is the end
    tr = reconstruct_track([1.01, 1.05, 2.0], logits, 10.0, 2.0)
    assert [s.label for s in tr.segments] == [0, 1]
    np.testing.assert_allclose(tr.boundaries, [1.05])


def test_clean_three_segment_identity():
    truth = SegmentTrack.from_plan([(0, 12.0), (2, 8.5), (1, 9.5)])
    t = targets_from_track(truth, (0.0, truth.duration), RATE)
    bounds = peak_pick(t.boundary, RATE)
    np.testing.assert_allclose(bounds, truth.boundaries)
    assert reconstruct_track(bounds, t.functions, RATE, truth.duration) == truth


@pytest.mark.parametrize("seed", range(10))
def test_random_track_identity(seed):
    rng = np.random.default_rng(seed)
    truth = random_track(rng)
    t = targets_from_track(truth, (0.0, truth.duration), RATE, n_classes=5)
    bounds = peak_pick(t.boundary, RATE)
    rec = reconstruct_track(bounds, t.functions, RATE, truth.duration)
    assert rec.labels == truth.labels
    np.testing.assert_allclose(rec.boundaries, truth.boundaries, atol=1e-9)
