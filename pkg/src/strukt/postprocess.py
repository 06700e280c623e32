"""Turn head activations into boundary times and a labeled track."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .annotations import Segment, SegmentTrack


@dataclass(frozen=True)
class PeakPickConfig:
    max_window: float = 3.0
    mean_window: float = 6.0
    delta: float = 0.05
    min_separation: float = 3.0

    def __post_init__(self):
        if min(self.max_window, self.mean_window, self.min_separation) <= 0 or self.delta < 0:
            raise ValueError("peak-picking windows must be positive and delta non-negative")


def _neighbour_max(x: np.ndarray, w: int) -> np.ndarray:
    """Max over ``[i-w, i+w]`` excluding ``i`` itself (edges clipped)."""
    if w == 0:
        return np.full_like(x, -np.inf)
    pad = np.full(len(x) + 2 * w, -np.inf)
    pad[w:w + len(x)] = x
    win = sliding_window_view(pad, 2 * w + 1).copy()
    win[:, w] = -np.inf
    return win.max(axis=1)


def _clipped_mean(x: np.ndarray, w: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(len(x))
    lo = np.maximum(i - w, 0)
    hi = np.minimum(i + w + 1, len(x))
    return (c[hi] - c[lo]) / (hi - lo)


def peak_pick(curve, grid_rate: float, cfg: PeakPickConfig = PeakPickConfig()) -> np.ndarray:
    """Boundary times (seconds) from a boundary activation curve.

    A frame qualifies when it is the strict maximum of its +-``max_window``
    neighbourhood and exceeds the +-``mean_window`` local mean by
    ``delta``.  Qualifying frames closer than ``min_separation`` are thinned
    greedily, highest value first (earlier frame on ties).
    """
    x = np.asarray(curve, dtype=float)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("curve must be a non-empty vector")
    w_max = int(round(cfg.max_window * grid_rate))
    w_mean = int(round(cfg.mean_window * grid_rate))
    cand = np.flatnonzero((x > _neighbour_max(x, w_max)) & (x >= _clipped_mean(x, w_mean) + cfg.delta))
    order = sorted(cand, key=lambda i: (-x[i], i))
    min_gap = cfg.min_separation * grid_rate
    kept: list[int] = []
    for i in order:
        if all(abs(i - j) >= min_gap - 1e-9 for j in kept):
            kept.append(i)
    return np.array(sorted(kept), dtype=float) / grid_rate


def reconstruct_track(boundaries, function_logits, grid_rate: float, duration: float) -> SegmentTrack:
    """Label the segments between boundaries by majority per-frame argmax.

    Segments that contain no grid frame are merged into their predecessor
    (the successor for a leading one).  Ties go to the lower class index.
    """
    logits = np.asarray(function_logits, dtype=float)
    frame_cls = logits.argmax(axis=1)
    n_cls = logits.shape[1]
    times = np.arange(len(frame_cls)) / grid_rate
    edges = [0.0] + [float(b) for b in boundaries if 0.0 < b < duration] + [float(duration)]

    spans = []  # [start, end, votes]
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = frame_cls[(times >= lo) & (times < hi)]
        votes = np.bincount(sel, minlength=n_cls)
        if sel.size == 0 and spans:
            spans[-1][1] = hi
        elif spans and spans[-1][2].sum() == 0:
            spans[-1] = [spans[-1][0], hi, votes]
        else:
            spans.append([lo, hi, votes])
    if spans[0][2].sum() == 0:
        spans[0][2] = np.bincount(frame_cls, minlength=n_cls)
    segs = tuple(Segment(lo, hi, int(np.argmax(v))) for lo, hi, v in spans)
    return SegmentTrack(segs, float(duration))
