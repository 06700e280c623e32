"""Training objectives built from tape primitives.

Boundary head: weighted BCE + smooth-L1 + focal.  Function head: weighted
BCE over per-class sigmoids.  Segment embeddings: margin contrastive loss.
The three groups are each divided by their own (gradient-stopped) magnitude
before the weighted sum, so only the direction of each group's gradient
survives, scaled by its weight.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import NonFiniteLossError, UndefinedMeanError
from .nn.tape import Tape, Var

PROB_CLAMP = 1e-7
CONTRASTIVE_DIST_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.9
    gamma: float = 0.1
    margin: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    smooth_l1_beta: float = 1.0
    norm_epsilon: float = 1e-8

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.margin <= 0 or self.smooth_l1_beta <= 0:
            raise ValueError("margin and smooth_l1_beta must be positive")


@dataclass
class LossReport:
    boundary_wbce: float
    boundary_smooth_l1: float
    boundary_focal: float
    function_wbce: float
    contrastive: float | None
    combined: float
    pair_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mask(mask, shape) -> np.ndarray:
    m = np.ones(shape) if mask is None else np.broadcast_to(np.asarray(mask, dtype=float), shape)
    return np.asarray(m, dtype=float)


def _masked_mean(t: Tape, per_elem: Var, mask: np.ndarray) -> Var:
    n = mask.sum()
    if n <= 0:
        raise UndefinedMeanError("all elements are masked")
    return (per_elem * t.constant(mask)).sum() * (1.0 / n)


def _clamped(t: Tape, pred: Var) -> Var:
    return t.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)


def wbce(pred: Var, target, weights=None, mask=None) -> Var:
    """Weighted binary cross-entropy, mean over valid elements."""
    t = pred.tape
    y = np.broadcast_to(np.asarray(target, dtype=float), pred.shape)
    w = np.ones(pred.shape) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), pred.shape)
    m = _mask(mask, pred.shape)
    p = _clamped(t, pred)
    ll = t.constant(y) * t.log(p) + t.constant(1.0 - y) * t.log(1.0 - p)
    return -_masked_mean(t, ll * t.constant(w), m)


def focal(pred: Var, target, mask=None, focal_alpha: float = 0.25, focal_gamma: float = 2.0) -> Var:
    """Binary focal loss; ``target`` must already be 0/1."""
    t = pred.tape
    y = np.broadcast_to(np.asarray(target, dtype=float), pred.shape)
    m = _mask(mask, pred.shape)
    p = _clamped(t, pred)
    q = 1.0 - p
    if focal_gamma == 0:
        pos = t.log(p)
        neg = t.log(q)
    else:
        pos = t.power(q, focal_gamma) * t.log(p)
        neg = t.power(p, focal_gamma) * t.log(q)
    per = t.constant(focal_alpha * y) * pos + t.constant((1.0 - focal_alpha) * (1.0 - y)) * neg
    return -_masked_mean(t, per, m)


def smooth_l1(pred: Var, target, mask=None, beta: float = 1.0) -> Var:
    if beta <= 0:
        raise ValueError("beta must be positive")
    t = pred.tape
    y = np.broadcast_to(np.asarray(target, dtype=float), pred.shape)
    m = _mask(mask, pred.shape)
    d = pred - t.constant(y)
    small = np.abs(d.value) < beta
    quad = (d * d) * (0.5 / beta)
    lin = t.abs(d) - 0.5 * beta
    return _masked_mean(t, t.where(small, quad, lin), m)


def contrastive(pairs: Sequence[tuple[Var, Var, bool]], margin: float = 1.0) -> Var | None:
    """Mean margin loss over embedding pairs; ``None`` for an empty list.

    Same-label pairs pay their squared distance; different-label pairs pay
    ``max(0, margin - dist)**2``.
    """
    if not pairs:
        return None
    t = pairs[0][0].tape
    terms = []
    for zi, zj, same in pairs:
        diff = zi - zj
        sq = (diff * diff).sum()
        if same:
            terms.append(sq)
        else:
            dist = t.power(sq + CONTRASTIVE_DIST_EPS, 0.5)
            gap = t.relu(margin - dist)
            terms.append(gap * gap)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / len(terms))


def boundary_weights(target: np.ndarray, mask: np.ndarray | None = None, cap: float = 20.0) -> np.ndarray:
    """``L / sum(target)`` on frames with target > 0.5, 1 elsewhere, capped."""
    target = np.asarray(target, dtype=float)
    valid = np.ones_like(target, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    mass = target[valid].sum()
    w = np.ones_like(target)
    if mass > 0:
        w[target > 0.5] = min(valid.sum() / mass, cap)
    return w


def class_weights(frame_counts: np.ndarray, cap: float = 10.0) -> np.ndarray:
    """Inverse class frequency normalized to mean 1, capped at ``cap``."""
    counts = np.asarray(frame_counts, dtype=float)
    inv = np.where(counts > 0, counts.sum() / np.maximum(counts, 1.0), 0.0)
    seen = counts > 0
    if not seen.any():
        return np.ones_like(counts)
    inv = inv / inv[seen].mean()
    inv[~seen] = 1.0
    return np.minimum(inv, cap)


def _check_finite(name: str, v: Var | None) -> None:
    if v is not None and not np.isfinite(v.value).all():
        raise NonFiniteLossError(f"{name} loss is not finite: {v.value}")


def combine(
    boundary_parts: Sequence[Var],
    function: Var,
    contrastive_term: Var | None,
    weights: LossWeights,
    scales: Sequence[float] | None = None,
) -> Var:
    """Magnitude-normalized weighted sum of boundary, function and contrastive losses.

    Each group is divided by ``|value| + norm_epsilon`` of itself, taken as a
    constant.  ``scales`` replaces those divisors with fixed numbers, which
    lets a finite-difference oracle reproduce the same construction.
    A missing contrastive term simply drops out.
    """
    for k, part in enumerate(boundary_parts):
        _check_finite(f"boundary[{k}]", part)
    _check_finite("function", function)
    _check_finite("contrastive", contrastive_term)
    boundary = boundary_parts[0]
    for part in boundary_parts[1:]:
        boundary = boundary + part
    groups = [(weights.alpha, boundary), (weights.beta, function)]
    if contrastive_term is not None:
        groups.append((weights.gamma, contrastive_term))
    total = None
    for k, (w, loss) in enumerate(groups):
        div = abs(float(loss.value)) + weights.norm_epsilon if scales is None else float(scales[k])
        term = loss * (w / div)
        total = term if total is None else total + term
    return total


def group_magnitudes(boundary_parts, function, contrastive_term, weights: LossWeights) -> list[float]:
    vals = [sum(float(p.value) for p in boundary_parts), float(function.value)]
    if contrastive_term is not None:
        vals.append(float(contrastive_term.value))
    return [abs(v) + weights.norm_epsilon for v in vals]
