"""Shared oracles for the test-suite (finite differences, toy pipelines)."""

import numpy as np

from strukt.annotations import SegmentTrack, segment_pairs, targets_from_track
from strukt.audio import AudioClip
from strukt.frontend import FeatureStats, FrontendConfig, melgram
from strukt.losses import LossWeights, class_weights
from strukt.nn.encoder import EncoderConfig, init_params
from strukt.nn.gradcheck import grad_check
from strukt.nn.tape import Tape
from strukt.trainer import item_loss, spans_on_grid


def fd_leaf_check(build, *arrays, eps=1e-6, seed=0):
    """Max relative error of reverse-mode vs central differences w.r.t. leaf inputs.

    ``build(tape, *leaves)`` returns a Var; the scalar checked is
    ``sum(out * R)`` with a fixed random ``R``.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def run(vals):
        t = Tape()
        leaves = [t.leaf(v) for v in vals]
        out = build(t, *leaves)
        return t, leaves, out

    _, _, probe = run(arrays)
    R = rng.standard_normal(probe.shape)

    t, leaves, out = run(arrays)
    loss = (out * t.constant(R)).sum()
    t.backward(loss, keep_adjoints=True)
    worst = 0.0
    for k, a in enumerate(arrays):
        g = t.adjoint(leaves[k])
        assert g.shape == a.shape
        for idx in np.ndindex(a.shape):
            up = [x.copy() for x in arrays]
            dn = [x.copy() for x in arrays]
            up[k][idx] += eps
            dn[k][idx] -= eps
            fu = float((run(up)[2].value * R).sum())
            fd = float((run(dn)[2].value * R).sum())
            num = (fu - fd) / (2 * eps)
            err = abs(g[idx] - num) / max(abs(g[idx]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def toy_clip(seconds=3.0, sample_rate=24000, seed=0):
    """Two tones joined at the midpoint, with a matching two-segment track."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = np.where(t < seconds / 2, 220.0, 330.0)
    x = 0.3 * np.sin(2 * np.pi * f0 * t) + 0.01 * rng.standard_normal(n)
    return AudioClip(x, sample_rate), SegmentTrack.from_plan([(0, seconds / 2), (1, seconds / 2)])


def toy_item(enc: EncoderConfig, seconds=3.0, ratio_N=1, seed=0):
    """Standardized features, targets and span pairs for :func:`toy_clip`."""
    fe = FrontendConfig(n_mels=enc.n_mels).with_ratio(ratio_N)
    clip, track = toy_clip(seconds, fe.sample_rate, seed)
    gram = melgram(clip, fe)
    feats = FeatureStats.fit([gram]).apply(gram.values)
    L = enc.grid_length(gram.n_frames)
    grid_rate = fe.frame_rate / enc.stem_stride
    window = (0.0, clip.duration)
    targets = targets_from_track(track, window, grid_rate, 0.5, enc.n_classes, n_frames=L)
    pairs = segment_pairs(track, window, 64, np.random.default_rng(seed))
    span_pairs = spans_on_grid(track, window, grid_rate, int(targets.valid_mask.sum()), pairs)
    return feats, targets, span_pairs


def pipeline_grad_error(enc: EncoderConfig, n_probes=200, eps=1e-4, seed=0, seconds=3.0, with_pairs=True):
    """Finite-difference check of the complete training loss on one toy clip."""
    feats, targets, span_pairs = toy_item(enc, seconds, seed=seed)
    if not with_pairs:
        span_pairs = []
    params = init_params(enc, seed)
    weights = LossWeights()
    fnw = class_weights(np.ones(enc.n_classes))
    base = item_loss(params, enc, feats, targets, span_pairs, weights, fnw)
    r = base.report
    scales = [abs(r.boundary_wbce + r.boundary_smooth_l1 + r.boundary_focal) + weights.norm_epsilon,
              abs(r.function_wbce) + weights.norm_epsilon]
    if r.contrastive is not None:
        scales.append(abs(r.contrastive) + weights.norm_epsilon)

    def f(p):
        item = item_loss(p, enc, feats, targets, span_pairs, weights, fnw, scales)
        return float(item.combined.value), item.tape.backward(item.combined)

    return grad_check(f, params, n_probes=n_probes, eps=eps, rng=np.random.default_rng(seed))


def brute_force_hits(ref, est, tol) -> int:
    """Largest one-to-one assignment within ``tol``, by exhaustive search over subsets."""
    ref, est = list(ref), list(est)
    memo = {}

    def best(i, used):
        if i == len(ref):
            return 0
        key = (i, used)
        if key not in memo:
            top = best(i + 1, used)
            for j, e in enumerate(est):
                if not used >> j & 1 and abs(ref[i] - e) <= tol:
                    top = max(top, 1 + best(i + 1, used | 1 << j))
            memo[key] = top
        return memo[key]

    return best(0, 0)


def random_track(rng, n_labels=5, n_sections=(2, 8), seconds=(4.0, 20.0)) -> SegmentTrack:
    """Track with random section lengths (0.1 s resolution) and no equal adjacent labels."""
    plan, prev = [], None
    for _ in range(int(rng.integers(n_sections[0], n_sections[1] + 1))):
        lab = int(rng.choice([k for k in range(n_labels) if k != prev]))
        plan.append((lab, round(float(rng.uniform(*seconds)), 1)))
        prev = lab
    return SegmentTrack.from_plan(plan)
