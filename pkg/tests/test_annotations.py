import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strukt.annotations import (
    Segment,
    SegmentTrack,
    Vocabulary,
    frame_labels,
    hamming_ramp,
    parse_segments,
    parse_segments_text,
    segment_pairs,
    targets_from_track,
    window_spans,
)
from strukt.errors import ParseError


def _track(plan):
    return SegmentTrack.from_plan(plan)


# ------------------------------------------------------------------ parsing


def test_parse_basic(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("0.0\t10.0\tverse\n10.0\t20.0\tchorus\n", encoding="utf-8")
    vocab = Vocabulary()
    tr = parse_segments(p, 20.0, vocab)
    assert len(tr.segments) == 2
    assert vocab.labels == ["verse", "chorus"]
    assert tr.duration == 20.0
    np.testing.assert_array_equal(tr.boundaries, [10.0])


def test_parse_lowercases_and_interns_first_seen():
    vocab = Vocabulary()
    tr = parse_segments_text("0\t5\tChorus\n5\t9\tVERSE\n9\t12\tchorus\n", None, vocab)
    assert vocab.labels == ["chorus", "verse"]
    assert tr.labels == [0, 1, 0]


def test_parse_snaps_small_gap_to_midpoint():
    tr = parse_segments_text("0\t10\tverse\n10.03\t20\tchorus\n", 20.0, Vocabulary())
    assert tr.segments[0].end == pytest.approx(10.015)
    assert tr.segments[1].start == pytest.approx(10.015)


def test_parse_snaps_small_overlap():
    tr = parse_segments_text("0\t10.04\tverse\n10.0\t20\tchorus\n", 20.0, Vocabulary())
    assert tr.segments[0].end == pytest.approx(10.02)


def test_parse_rejects_large_overlap_with_line():
    with pytest.raises(ParseError) as err:
        parse_segments_text("0\t10.5\tverse\n10.0\t20\tchorus\n", 20.0, Vocabulary())
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_parse_rejects_large_gap():
    with pytest.raises(ParseError):
        parse_segments_text("0\t10\tverse\n10.2\t20\tchorus\n", 20.0, Vocabulary())


@pytest.mark.parametrize("text", [
    "0\t10\tverse\n10\t5\tchorus\n",  # end before start
    "0\t10\tve$rse\n",  # bad character
    "0\t10\n",  # missing column
    "0\tabc\tverse\n",  # not a number
    "",  # empty
])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_segments_text(text, None, Vocabulary())


def test_parse_duration_mismatch():
    with pytest.raises(ParseError):
        parse_segments_text("0\t10\tverse\n", 12.0, Vocabulary())


def test_tsv_roundtrip():
    vocab = Vocabulary(["intro", "verse"])
    tr = SegmentTrack.from_plan([(0, 4.5), (1, 6.25), (0, 3.0)])
    back = parse_segments_text(tr.to_tsv(vocab), tr.duration, vocab)
    assert back == tr


def test_vocab_save_load(tmp_path):
    v = Vocabulary(["intro", "verse", "chorus"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v


def test_track_rejects_gaps():
    with pytest.raises(ValueError):
        SegmentTrack((Segment(0, 5, 0), Segment(6, 9, 1)), 9.0)


# ------------------------------------------------------------------ targets


def test_hamming_m5():
    np.testing.assert_allclose(hamming_ramp(5), [0.08, 0.54, 1.0, 0.54, 0.08], atol=1e-12)


@pytest.mark.parametrize("width,m", [(1, 1), (2.9, 3), (4.2, 5), (10, 11), (9.0, 9), (11.9, 11), (12.5, 13)])
def test_hamming_odd_nearest(width, m):
    w = hamming_ramp(width)
    assert len(w) == m and w[m // 2] == 1.0


def test_boundary_bump_at_grid_frame():
    tr = _track([(0, 10.0), (1, 10.0)])
    t = targets_from_track(tr, (0.0, 20.0), grid_rate=5.0, ramp_width=1.0)
    assert len(t) == 100
    np.testing.assert_allclose(t.boundary[48:53], [0.08, 0.54, 1.0, 0.54, 0.08], atol=1e-12)
    assert t.boundary.sum() == pytest.approx(0.08 * 2 + 0.54 * 2 + 1.0)


def test_no_interior_boundary_gives_zero_curve():
    tr = _track([(0, 12.0)])
    t = targets_from_track(tr, (0.0, 12.0), 10.0)
    assert not t.boundary.any()


def test_functions_switch_at_rounded_frame():
    tr = _track([(0, 7.33), (1, 10.0)])
    t = targets_from_track(tr, (2.0, 10.0), grid_rate=10.0)
    switch = round((7.33 - 2.0) * 10.0)
    lab = t.labels
    assert (lab[:switch] == 0).all() and (lab[switch:] == 1).all()
    assert t.boundary[switch] == 1.0


def test_padding_frames_masked():
    tr = _track([(0, 5.0), (1, 5.0)])
    t = targets_from_track(tr, (4.0, 10.0), grid_rate=10.0)
    assert t.valid_mask.sum() == 60
    assert not t.functions[~t.valid_mask].any()
    np.testing.assert_array_equal(t.functions[t.valid_mask].sum(axis=1), 1.0)


def test_overlapping_bumps_take_max():
    tr = _track([(0, 5.0), (1, 0.2), (0, 5.0)])
    t = targets_from_track(tr, (0.0, 10.2), grid_rate=10.0, ramp_width=1.0)
    assert t.boundary.max() == 1.0
    assert t.boundary[50] == 1.0 and t.boundary[52] == 1.0
    assert t.boundary[51] == pytest.approx(max(hamming_ramp(10)[6], hamming_ramp(10)[4]))


def test_n_frames_override():
    tr = _track([(0, 5.0), (1, 5.0)])
    t = targets_from_track(tr, (0.0, 10.0), 10.0, n_frames=101)
    assert len(t) == 101 and not t.valid_mask[100]


def test_frame_labels_past_end():
    tr = _track([(0, 2.0)])
    lab = frame_labels(tr, 10.0, 25)
    assert (lab[:20] == 0).all() and (lab[20:] == -1).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 90), st.sampled_from([3.0, 5.0, 9.0, 15.0]))
def test_property_symmetric_peak(b_frame, width):
    rate = 10.0
    tr = _track([(0, b_frame / rate), (1, 10.0 - b_frame / rate)])
    t = targets_from_track(tr, (0.0, 10.0), rate, ramp_width=width / rate)
    c = b_frame
    assert t.boundary[c] == 1.0
    h = int(width) // 2
    lo, hi = max(c - h, 0), min(c + h, len(t) - 1)
    r = min(c - lo, hi - c)
    np.testing.assert_allclose(t.boundary[c - r:c], t.boundary[c + 1:c + r + 1][::-1], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(15, 80)), min_size=1, max_size=6),
       st.integers(0, 40), st.integers(1, 30))
def test_property_onehot_sum(plan, off_frames, len_frames):
    rate = 10.0
    tr = _track([(lab, n / rate) for lab, n in plan])
    t = targets_from_track(tr, (off_frames / rate, len_frames * 3 / rate), rate, n_classes=4)
    assert t.functions[t.valid_mask].sum() == pytest.approx(t.valid_mask.sum())
    assert ((t.boundary >= 0) & (t.boundary <= 1)).all()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(15, 80)), min_size=2, max_size=6),
       st.integers(0, 30), st.integers(1, 20))
def test_property_translation(plan, off, k):
    rate = 10.0
    tr = _track([(lab, n / rate) for lab, n in plan])
    length = 8.0
    a = targets_from_track(tr, (off / rate, length), rate, n_classes=4)
    b = targets_from_track(tr, ((off + k) / rate, length), rate, n_classes=4)
    # interior frames away from both window edges (bumps at the edge may be cut off)
    h = len(hamming_ramp(rate)) // 2
    sl_a = slice(k + h, len(a) - h)
    sl_b = slice(h, len(b) - k - h)
    np.testing.assert_allclose(a.boundary[sl_a], b.boundary[sl_b], atol=1e-12)
    np.testing.assert_array_equal(a.labels[k:], b.labels[:len(b) - k])


# ------------------------------------------------------------------- pairs


def test_pairs_verse_chorus_verse():
    tr = _track([(1, 5.0), (2, 5.0), (1, 5.0)])
    pairs = segment_pairs(tr, (0.0, 15.0), 64, np.random.default_rng(0))
    assert len(pairs) == 3
    same = [p for p in pairs if p.same_label]
    assert [(p.i, p.j) for p in same] == [(0, 2)]


def test_pairs_single_segment_empty():
    tr = _track([(1, 30.0)])
    assert segment_pairs(tr, (5.0, 10.0), 64, np.random.default_rng(0)) == []


def test_pairs_min_overlap():
    tr = _track([(0, 10.0), (1, 10.0)])
    assert window_spans(tr, (9.5, 5.0)) == [(1, 0.5, 5.0)]
    assert segment_pairs(tr, (9.5, 5.0), 64, np.random.default_rng(0)) == []


def test_pairs_balanced_subsample():
    rng = np.random.default_rng(3)
    tr = _track([(int(rng.integers(5)), 2.0) for _ in range(100)])
    pairs = segment_pairs(tr, (0.0, 200.0), 64, np.random.default_rng(1))
    assert len(pairs) == 64
    assert sum(not p.same_label for p in pairs) <= 45
    assert len(set(pairs)) == 64
    again = segment_pairs(tr, (0.0, 200.0), 64, np.random.default_rng(1))
    assert pairs == again
