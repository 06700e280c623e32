"""Boundary hit-rate F-measures and frame-wise function accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .annotations import SegmentTrack, frame_labels
from .errors import UndefinedMeanError
from .postprocess import PeakPickConfig, peak_pick

CSV_COLUMNS = ("song_id", "acc", "hr05_p", "hr05_r", "hr05_f", "hr3_p", "hr3_r", "hr3_f")


@dataclass
class HitRate:
    precision: float
    recall: float
    f: float
    matches: list[tuple[int, int]]


def f_measure(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def hit_rate_f(reference, estimate, tolerance: float) -> HitRate:
    """Precision/recall/F of a one-to-one matching within ``tolerance`` seconds.

    The hit count is a maximum bipartite matching, so crowded boundaries
    are never under-counted the way a greedy pass can.
    ``matches`` holds ``(reference index, estimate index)`` pairs.
    """
    ref = np.asarray(reference, dtype=float).reshape(-1)
    est = np.asarray(estimate, dtype=float).reshape(-1)
    matches: list[tuple[int, int]] = []
    if ref.size and est.size:
        adj = np.abs(ref[:, None] - est[None, :]) <= tolerance
        if adj.any():
            match = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
            matches = [(int(r), int(e)) for r, e in enumerate(match) if e >= 0]
    hits = len(matches)
    p = hits / est.size if est.size else 0.0
    r = hits / ref.size if ref.size else 0.0
    return HitRate(p, r, f_measure(p, r), matches)


def frame_accuracy(pred_labels, true_labels, mask=None) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError("label sequences differ in length")
    valid = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not valid.any():
        raise UndefinedMeanError("no valid frames")
    return float((pred[valid] == true[valid]).mean())


@dataclass
class MetricsReport:
    acc: float
    hr_05: tuple[float, float, float]
    hr_3: tuple[float, float, float]
    n_ref_boundaries: int
    n_est_boundaries: int

    @property
    def hr05_f(self) -> float:
        return self.hr_05[2]

    @property
    def hr3_f(self) -> float:
        return self.hr_3[2]

    def row(self, song_id: str) -> dict:
        return {
            "song_id": song_id, "acc": self.acc,
            "hr05_p": self.hr_05[0], "hr05_r": self.hr_05[1], "hr05_f": self.hr_05[2],
            "hr3_p": self.hr_3[0], "hr3_r": self.hr_3[1], "hr3_f": self.hr_3[2],
        }

    def to_dict(self) -> dict:
        return asdict(self)


def score_boundaries(ref_times, est_times, acc: float) -> MetricsReport:
    h5 = hit_rate_f(ref_times, est_times, 0.5)
    h3 = hit_rate_f(ref_times, est_times, 3.0)
    return MetricsReport(
        acc,
        (h5.precision, h5.recall, h5.f),
        (h3.precision, h3.recall, h3.f),
        len(ref_times),
        len(est_times),
    )


def evaluate_song(
    boundary_curve,
    function_logits,
    grid_rate: float,
    track: SegmentTrack,
    peak_cfg: PeakPickConfig = PeakPickConfig(),
) -> MetricsReport:
    """Score full-song activations against a ground-truth track."""
    logits = np.asarray(function_logits)
    est = peak_pick(boundary_curve, grid_rate, peak_cfg)
    est = est[(est > 0) & (est < track.duration)]
    true = frame_labels(track, grid_rate, logits.shape[0])
    valid = true >= 0
    acc = frame_accuracy(logits.argmax(axis=1), true, valid)
    return score_boundaries(track.boundaries, est, acc)


def score_tracks(ref: SegmentTrack, est: SegmentTrack, grid_rate: float = 10.0) -> MetricsReport:
    """Compare two annotation tracks, sampling labels on a fixed grid."""
    n = int(np.ceil(ref.duration * grid_rate))
    true = frame_labels(ref, grid_rate, n)
    pred = frame_labels(est, grid_rate, n)
    valid = true >= 0
    acc = frame_accuracy(pred, true, valid)
    return score_boundaries(ref.boundaries, est.boundaries, acc)


def corpus_mean(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean over songs."""
    if not reports:
        raise UndefinedMeanError("no songs to aggregate")
    acc = float(np.mean([r.acc for r in reports]))
    h5 = tuple(float(v) for v in np.mean([r.hr_05 for r in reports], axis=0))
    h3 = tuple(float(v) for v in np.mean([r.hr_3 for r in reports], axis=0))
    return MetricsReport(acc, h5, h3, sum(r.n_ref_boundaries for r in reports), sum(r.n_est_boundaries for r in reports))
