"""Segment annotations, label vocabulary and frame-level activation targets."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ParseError

SNAP_TOLERANCE = 0.05
_LABEL_RE = re.compile(r"^[a-z0-9][a-z0-9 _.\-']*$")


class Segment(NamedTuple):
    start: float
    end: float
    label: int


class Vocabulary:
    """Ordered label list; labels are interned in first-seen order."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.intern(label)

    @staticmethod
    def canonical(label: str) -> str:
        return label.strip().lower()

    def intern(self, label: str) -> int:
        label = self.canonical(label)
        if label not in self._index:
            self._index[label] = len(self._labels)
            self._labels.append(label)
        return self._index[label]

    def index(self, label: str) -> int:
        return self._index[self.canonical(label)]

    def __getitem__(self, i: int) -> str:
        return self._labels[i]

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"Vocabulary({self._labels!r})"

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{label}\n" for label in self._labels), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line.strip())


@dataclass(frozen=True)
class SegmentTrack:
    """Contiguous labeled intervals covering ``[0, duration]``."""

    segments: tuple[Segment, ...]
    duration: float

    def __post_init__(self):
        segs = tuple(Segment(float(s), float(e), int(lab)) for s, e, lab in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("a track needs at least one segment")
        if abs(segs[0].start) > 1e-9:
            raise ValueError("first segment must start at 0")
        for prev, cur in zip(segs, segs[1:]):
            if abs(prev.end - cur.start) > 1e-9:
                raise ValueError(f"segments not contiguous at {prev.end} / {cur.start}")
        for seg in segs:
            if seg.end <= seg.start:
                raise ValueError(f"empty segment {seg}")
            if seg.label < 0:
                raise ValueError("negative label index")
        if abs(segs[-1].end - self.duration) > 1e-9:
            raise ValueError("last segment must end at the track duration")

    @property
    def boundaries(self) -> np.ndarray:
        """Interior boundary times (track start and end excluded)."""
        return np.array([seg.start for seg in self.segments[1:]], dtype=float)

    @property
    def labels(self) -> list[int]:
        return [seg.label for seg in self.segments]

    def check_vocabulary(self, size: int) -> None:
        for seg in self.segments:
            if seg.label >= size:
                raise ValueError(f"label index {seg.label} outside vocabulary of size {size}")

    @classmethod
    def from_plan(cls, plan: Sequence[tuple[int, float]]) -> "SegmentTrack":
        """Build a track from ``(label index, duration)`` pairs."""
        segs, t = [], 0.0
        for label, dur in plan:
            segs.append(Segment(t, t + dur, label))
            t += dur
        return cls(tuple(segs), t)

    def to_tsv(self, vocab: Vocabulary) -> str:
        return "".join(f"{s.start:.6f}\t{s.end:.6f}\t{vocab[s.label]}\n" for s in self.segments)


def parse_segments_text(text: str, duration: float | None, vocab: Vocabulary) -> SegmentTrack:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ParseError("expected start<TAB>end<TAB>label", lineno)
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError("times must be decimal seconds", lineno) from None
        label = Vocabulary.canonical(parts[2])
        if not _LABEL_RE.match(label):
            raise ParseError(f"invalid characters in label {parts[2]!r}", lineno)
        if not np.isfinite(start) or not np.isfinite(end) or end <= start:
            raise ParseError(f"non-monotonic times {start} -> {end}", lineno)
        if rows and start < rows[-1][0]:
            raise ParseError("segment starts before the previous one", lineno)
        rows.append([start, end, label, lineno])
    if not rows:
        raise ParseError("no segments found")

    if abs(rows[0][0]) > SNAP_TOLERANCE:
        raise ParseError(f"first segment starts at {rows[0][0]}, not 0", rows[0][3])
    rows[0][0] = 0.0
    for prev, cur in zip(rows, rows[1:]):
        gap = cur[0] - prev[1]
        if abs(gap) > SNAP_TOLERANCE + 1e-9:
            kind = "gap" if gap > 0 else "overlap"
            raise ParseError(f"{kind} of {abs(gap):.3f} s exceeds tolerance", cur[3])
        mid = 0.5 * (prev[1] + cur[0])
        prev[1] = cur[0] = mid
    if duration is None:
        duration = rows[-1][1]
    elif abs(rows[-1][1] - duration) > SNAP_TOLERANCE + 1e-9:
        raise ParseError(f"last segment ends at {rows[-1][1]}, duration is {duration}", rows[-1][3])
    rows[-1][1] = float(duration)
    for start, end, _, lineno in rows:
        if end <= start:
            raise ParseError("segment collapsed after snapping", lineno)

    segs = tuple(Segment(s, e, vocab.intern(lab)) for s, e, lab, _ in rows)
    return SegmentTrack(segs, float(duration))


def parse_segments(path, duration: float | None = None, vocab: Vocabulary | None = None) -> SegmentTrack:
    """Read a ``start<TAB>end<TAB>label`` annotation file.

    Labels are lowercased and interned into ``vocab`` (a fresh vocabulary
    when omitted).  Gaps or overlaps of at most 50 ms between consecutive
    segments are closed at their midpoint; larger ones raise
    :class:`ParseError` naming the line.
    """
    if vocab is None:
        vocab = Vocabulary()
    text = Path(path).read_text(encoding="utf-8")
    return parse_segments_text(text, duration, vocab)


@dataclass
class ActivationTargets:
    boundary: np.ndarray
    functions: np.ndarray
    valid_mask: np.ndarray
    grid_rate: float

    @property
    def labels(self) -> np.ndarray:
        """Per-frame class index (-1 on masked frames)."""
        out = self.functions.argmax(axis=1)
        out[~self.valid_mask] = -1
        return out

    def __len__(self) -> int:
        return len(self.boundary)


def hamming_ramp(width_frames: float) -> np.ndarray:
    """Odd-length Hamming bump rescaled so its center is exactly 1.

    The length is the odd integer nearest ``width_frames`` (ties go up).
    """
    m = max(int(2 * np.floor(width_frames / 2) + 1), 1)
    if m == 1:
        return np.ones(1)
    n = np.arange(m)
    w = 0.54 - 0.46 * np.cos(2 * np.pi * n / (m - 1))
    return w / w[m // 2]


def grid_length(length: float, grid_rate: float) -> int:
    return int(round(length * grid_rate))


def frame_labels(track: SegmentTrack, grid_rate: float, n_frames: int, offset: float = 0.0) -> np.ndarray:
    """Class index of every grid frame; -1 past the end of the track.

    Frame ``j`` switches to the segment beginning at ``b`` once
    ``j >= round((b - offset) * grid_rate)``.  This is the same rounding the
    boundary ramps use, so label changes and boundary peaks coincide.
    """
    j = np.arange(n_frames)
    starts = np.array([seg.start for seg in track.segments])
    switch = np.round((starts - offset) * grid_rate)
    idx = np.searchsorted(switch, j, side="right") - 1
    idx = np.clip(idx, 0, len(starts) - 1)
    labels = np.array(track.labels)[idx]
    valid = offset + j / grid_rate < track.duration - 1e-9
    return np.where(valid, labels, -1)


def targets_from_track(
    track: SegmentTrack,
    window: tuple[float, float],
    grid_rate: float,
    ramp_width: float = 1.0,
    n_classes: int | None = None,
    n_frames: int | None = None,
) -> ActivationTargets:
    """Frame-level boundary and function targets for a window of ``track``.

    ``n_frames`` overrides ``round(length * grid_rate)`` so that targets can
    share the model's output grid exactly.
    """
    offset, length = window
    if grid_rate <= 0 or ramp_width <= 0 or length <= 0:
        raise ValueError("grid_rate, ramp_width and window length must be positive")
    if n_classes is None:
        n_classes = max(track.labels) + 1
    L = grid_length(length, grid_rate) if n_frames is None else int(n_frames)

    boundary = np.zeros(L)
    bump = hamming_ramp(ramp_width * grid_rate)
    half = len(bump) // 2
    for b in track.boundaries:
        rel = b - offset
        if rel < 0 or rel > length:
            continue
        c = int(round(rel * grid_rate))
        lo, hi = c - half, c + half + 1
        blo, bhi = max(lo, 0), min(hi, L)
        if blo >= bhi:
            continue
        np.maximum(boundary[blo:bhi], bump[blo - lo:bhi - lo], out=boundary[blo:bhi])

    labels = frame_labels(track, grid_rate, L, offset)
    valid = labels >= 0
    functions = np.zeros((L, n_classes))
    functions[np.flatnonzero(valid), labels[valid]] = 1.0
    return ActivationTargets(boundary, functions, valid, float(grid_rate))


class SegmentPair(NamedTuple):
    i: int
    j: int
    same_label: bool


def window_spans(track: SegmentTrack, window: tuple[float, float], min_overlap: float = 1.0):
    """``(segment index, rel_start, rel_end)`` for segments overlapping the window by >= ``min_overlap`` s."""
    offset, length = window
    out = []
    for k, seg in enumerate(track.segments):
        lo = max(seg.start, offset)
        hi = min(seg.end, offset + length)
        if hi - lo >= min_overlap - 1e-9:
            out.append((k, lo - offset, hi - offset))
    return out


def segment_pairs(
    track: SegmentTrack,
    window: tuple[float, float],
    max_pairs: int,
    rng: np.random.Generator,
    max_negative_fraction: float = 0.7,
) -> list[SegmentPair]:
    """Unordered segment pairs inside a window for the contrastive objective.

    When there are more than ``max_pairs`` candidates a seeded subsample
    is drawn with at most ``max_negative_fraction`` of it negative.
    """
    idx = [k for k, _, _ in window_spans(track, window)]
    pos, neg = [], []
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            same = track.segments[i].label == track.segments[j].label
            (pos if same else neg).append(SegmentPair(i, j, same))
    if len(pos) + len(neg) <= max_pairs:
        return sorted(pos + neg)
    n_neg = min(len(neg), int(np.floor(max_negative_fraction * max_pairs)))
    n_pos = min(len(pos), max_pairs - n_neg)
    pick_pos = rng.choice(len(pos), size=n_pos, replace=False) if n_pos else []
    pick_neg = rng.choice(len(neg), size=n_neg, replace=False) if n_neg else []
    return sorted([pos[k] for k in pick_pos] + [neg[k] for k in pick_neg])
