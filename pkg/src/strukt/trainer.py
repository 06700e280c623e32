"""Training loop: random crops, hop-scaled features, four-part loss, Adam."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .annotations import ActivationTargets, frame_labels, segment_pairs, targets_from_track, window_spans
from .audio import AudioClip, crop_window, random_offset
from .corpus import Corpus, Song
from .errors import ConfigurationError, ContractError, InputTooShortError, NonFiniteLossError
from .frontend import FeatureStats, FrontendConfig, melgram
from .losses import (
    LossReport,
    LossWeights,
    boundary_weights,
    class_weights,
    combine,
    contrastive,
    focal,
    smooth_l1,
    wbce,
)
from .metrics import MetricsReport, corpus_mean, evaluate_song
from .model import StruktModel
from .nn.encoder import EncoderConfig, forward, init_params, project_embeddings
from .nn.params import ParamStore
from .nn.tape import Tape
from .postprocess import PeakPickConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    window_T: float = 48.0
    ratio_N: int = 2
    batch_size: int = 8
    total_steps: int = 1000
    lr0: float = 1e-3
    lr_decay_gamma: float = 0.99
    lr_decay_every: int = 500
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 250
    max_pairs: int = 64
    contrastive: bool = True
    ramp_width: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 0 or self.window_T <= 0 or self.ratio_N < 1:
            raise ConfigurationError("invalid training configuration")

    def check_frontend(self, fe: FrontendConfig) -> None:
        if self.window_T * fe.sample_rate < fe.n_fft * self.ratio_N:
            raise ConfigurationError(f"window {self.window_T} s too short for ratio {self.ratio_N}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if isinstance(obj.get("weights"), dict):
            obj["weights"] = LossWeights(**obj["weights"])
        return cls(**obj)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.lr_decay_gamma ** (step // cfg.lr_decay_every)


class Adam:
    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        """In-place bias-corrected Adam update of ``params``."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SongFeatures:
    """Full-song log-mel features, computed once per song on first use."""

    def __init__(self, songs: list[Song], fe: FrontendConfig):
        self.fe = fe
        self._songs = songs
        self._grams: dict[int, np.ndarray] = {}

    def __getitem__(self, k: int) -> np.ndarray:
        if k not in self._grams:
            self._grams[k] = melgram(self._songs[k].clip, self.fe).values
        return self._grams[k]


def crop_features(clip: AudioClip, offset: float, window_T: float, fe: FrontendConfig) -> tuple[np.ndarray, float]:
    """Log-mel of the ``window_T``-second crop at ``offset`` (zero-filled past the end)."""
    crop, offset = crop_window(clip, offset, window_T)
    return melgram(crop, fe).values, offset


@dataclass
class ItemLoss:
    combined: object  # Var
    report: LossReport
    tape: Tape


def spans_on_grid(track, window, grid_rate: float, n_valid: int, pairs):
    """Map segment pairs to output-grid frame spans, dropping spans shorter than one frame."""
    spans = {}
    for k, lo, hi in window_spans(track, window):
        a = int(round(lo * grid_rate))
        b = min(int(round(hi * grid_rate)), n_valid)
        if b > a:
            spans[k] = (a, b)
    return [(spans[p.i], spans[p.j], p.same_label) for p in pairs if p.i in spans and p.j in spans]


def item_loss(
    params: ParamStore,
    enc: EncoderConfig,
    features: np.ndarray,
    targets: ActivationTargets,
    span_pairs,
    weights: LossWeights,
    function_class_weights: np.ndarray,
    scales=None,
) -> ItemLoss:
    """All loss components for one crop, recorded on a fresh tape."""
    tape = Tape(params)
    out = forward(params, features, enc, tape)
    mask = targets.valid_mask
    b_prob = tape.sigmoid(out.boundary_logits)
    b_target = targets.boundary
    b_wbce = wbce(b_prob, b_target, boundary_weights(b_target, mask), mask)
    b_l1 = smooth_l1(b_prob, b_target, mask, weights.smooth_l1_beta)
    b_focal = focal(b_prob, (b_target > 0.5).astype(float), mask, weights.focal_alpha, weights.focal_gamma)
    f_prob = tape.sigmoid(out.function_logits)
    f_loss = wbce(f_prob, targets.functions, function_class_weights[None, :], mask[:, None])

    cl = None
    if span_pairs:
        unique = sorted({s for a, b, _ in span_pairs for s in (a, b)})
        emb = dict(zip(unique, project_embeddings(tape, out.frame_embeddings, unique)))
        cl = contrastive([(emb[a], emb[b], same) for a, b, same in span_pairs], weights.margin)
    total = combine([b_wbce, b_l1, b_focal], f_loss, cl, weights, scales)
    report = LossReport(
        float(b_wbce.value), float(b_l1.value), float(b_focal.value), float(f_loss.value),
        None if cl is None else float(cl.value), float(total.value), len(span_pairs),
    )
    return ItemLoss(total, report, tape)


def batch_scales(reports: list[LossReport], weights: LossWeights) -> list[float]:
    """Per-item divisors that normalize each loss group by its batch-mean magnitude.

    With these divisors the batch mean of the per-item combined losses is
    exactly ``alpha * B / |B| + beta * F / |F| + gamma * C / |C|`` for the
    batch-mean groups ``B, F, C`` (norms taken as constants).  The
    contrastive mean runs only over items that have pairs, hence its
    divisor is rescaled by that count.
    """
    eps = weights.norm_epsilon
    n = len(reports)
    b = np.mean([r.boundary_wbce + r.boundary_smooth_l1 + r.boundary_focal for r in reports])
    f = np.mean([r.function_wbce for r in reports])
    scales = [abs(b) + eps, abs(f) + eps]
    cl = [r.contrastive for r in reports if r.contrastive is not None]
    if cl:
        scales.append((abs(np.mean(cl)) + eps) * len(cl) / n)
    return scales


def batch_gradient(params: ParamStore, enc: EncoderConfig, items, weights: LossWeights,
                   function_class_weights: np.ndarray) -> tuple[np.ndarray, list[LossReport]]:
    """Gradient of the magnitude-normalized batch loss, one tape per item.

    ``items`` holds ``(features, targets, span_pairs)`` triples.  A
    forward-only pass measures the batch magnitudes; a second pass
    differentiates every item with those magnitudes held fixed, so only one
    tape is alive at a time.  A single item needs no first pass.
    """
    scales = None
    if len(items) > 1:
        reports = [item_loss(params, enc, *it, weights, function_class_weights).report for it in items]
        scales = batch_scales(reports, weights)
    grad = np.zeros(params.size)
    reports = []
    for it in items:
        item = item_loss(params, enc, *it, weights, function_class_weights, scales)
        g = item.tape.backward(item.combined)
        if not np.isfinite(g).all():
            raise NonFiniteLossError("non-finite gradient")
        grad += g
        reports.append(item.report)
    grad /= len(items)
    return grad, reports


def build_targets(model: StruktModel, track, offset: float, length: float, n_frames: int) -> ActivationTargets:
    return targets_from_track(
        track, (offset, length), model.grid_rate, model.ramp_width, len(model.vocab), n_frames=n_frames
    )


def infer_full_song(model: StruktModel, clip: AudioClip, features: np.ndarray | None = None):
    """One forward pass over a whole song (no chunking).

    Returns ``(boundary probabilities [L'], function logits [L', C])``.
    """
    fe = model.frontend
    if len(clip) < fe.n_fft:
        raise InputTooShortError(f"song shorter than one {fe.n_fft}-sample frame at ratio {fe.ratio_N}")
    if features is None:
        features = melgram(clip, fe).values
    out = forward(model.params, model.stats.apply(features), model.encoder)
    probs = 1.0 / (1.0 + np.exp(-out.boundary_logits.value))
    return probs, out.function_logits.value.copy()


def evaluate_model(
    model: StruktModel, songs: list[Song], peak_cfg: PeakPickConfig = PeakPickConfig(),
    features: SongFeatures | None = None,
) -> tuple[list[MetricsReport], MetricsReport]:
    reports = []
    for k, song in enumerate(songs):
        feats = None if features is None else features[k]
        probs, logits = infer_full_song(model, song.clip, feats)
        reports.append(evaluate_song(probs, logits, model.grid_rate, song.track, peak_cfg))
    return reports, corpus_mean(reports)


@dataclass
class TrainResult:
    model: StruktModel
    log: list[dict]
    best_step: int
    best_metrics: MetricsReport | None
    seconds_per_step: float


def majority_baseline(songs: list[Song], grid_rate: float, n_classes: int) -> float:
    """Per-song mean ACC of always predicting the most frequent class of ``songs``."""
    labels = []
    for song in songs:
        lab = frame_labels(song.track, grid_rate, int(np.ceil(song.track.duration * grid_rate)))
        labels.append(lab[lab >= 0])
    top = int(np.argmax(np.bincount(np.concatenate(labels), minlength=n_classes)))
    return float(np.mean([np.mean(lab == top) for lab in labels]))


def train(
    train_songs: Corpus,
    cfg: TrainConfig,
    enc: EncoderConfig | None = None,
    fe: FrontendConfig | None = None,
    val_songs: Corpus | None = None,
    out_path=None,
    log_path=None,
    peak_cfg: PeakPickConfig = PeakPickConfig(),
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train an encoder from scratch on random crops of ``train_songs``.

    Each step draws ``batch_size`` songs with replacement, crops a
    uniformly placed window of ``window_T`` seconds from each, and averages the
    per-crop gradients in batch order.  When ``val_songs`` is given the
    model is evaluated on full songs every ``eval_every`` steps and the
    best validation ACC is kept (and written to ``out_path``).
    """
    if not train_songs.songs:
        raise ContractError("empty training corpus")
    fe = (fe or FrontendConfig()).with_ratio(cfg.ratio_N)
    cfg.check_frontend(fe)
    n_classes = len(train_songs.vocab)
    if enc is None:
        enc = EncoderConfig(n_mels=fe.n_mels, n_classes=n_classes)
    elif enc.n_classes != n_classes or enc.n_mels != fe.n_mels:
        enc = replace(enc, n_classes=n_classes, n_mels=fe.n_mels)

    songs = train_songs.songs
    for song in songs:
        if song.clip.sample_rate != fe.sample_rate:
            raise ConfigurationError(f"{song.song_id}: sample rate {song.clip.sample_rate} != {fe.sample_rate}")
    stats = FeatureStats.fit(melgram(s.clip, fe) for s in songs)
    params = init_params(enc, cfg.seed)
    model = StruktModel(fe, enc, train_songs.vocab, stats, params, cfg.ramp_width)
    fn_weights = class_weights(train_songs.label_seconds())
    val_feats = SongFeatures(val_songs.songs, fe) if val_songs and val_songs.songs else None

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.size)
    n_out = enc.grid_length(fe.n_frames(int(round(cfg.window_T * fe.sample_rate))))
    records: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    best = (-1.0, -1, None, None)  # acc, step, metrics, flat
    started = time.perf_counter()

    def emit(rec):
        records.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log_fh.flush()
        if progress:
            progress(rec)

    def validate(step):
        nonlocal best
        if val_feats is None:
            return
        _, mean = evaluate_model(model, val_songs.songs, peak_cfg, val_feats)
        emit({"kind": "eval", "step": step, "acc": mean.acc, "hr05_f": mean.hr05_f, "hr3_f": mean.hr3_f})
        if mean.acc > best[0]:
            best = (mean.acc, step, mean, params.flat.copy())
            if out_path:
                model.save(out_path)

    try:
        for step in range(cfg.total_steps):
            items = []
            for _ in range(cfg.batch_size):
                k = int(rng.integers(len(songs)))
                song = songs[k]
                offset = random_offset(song.clip.duration, cfg.window_T, fe.sample_rate, rng)
                raw, offset = crop_features(song.clip, offset, cfg.window_T, fe)
                feats = stats.apply(raw)
                targets = build_targets(model, song.track, offset, cfg.window_T, n_out)
                pairs = []
                if cfg.contrastive:
                    sp = segment_pairs(song.track, (offset, cfg.window_T), cfg.max_pairs, rng)
                    pairs = spans_on_grid(song.track, (offset, cfg.window_T), model.grid_rate,
                                          int(targets.valid_mask.sum()), sp)
                items.append((feats, targets, pairs))
            try:
                grad, reports = batch_gradient(params, enc, items, cfg.weights, fn_weights)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"{exc} at step {step}") from None
            lr = learning_rate(step, cfg)
            emit(_step_record(step, lr, reports))
            opt.step(params.flat, grad, lr)
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                validate(step + 1)
        elapsed = time.perf_counter() - started
        if not cfg.eval_every or cfg.total_steps % cfg.eval_every:
            validate(cfg.total_steps)
    except NonFiniteLossError:
        log.error("training aborted: non-finite loss; last good checkpoint kept")
        raise
    finally:
        if log_fh:
            log_fh.close()

    if best[3] is not None:
        params.flat[:] = best[3]
    elif out_path:
        model.save(out_path)
    return TrainResult(model, records, best[1], best[2], elapsed / max(cfg.total_steps, 1))


def _step_record(step: int, lr: float, reports: list[LossReport]) -> dict:
    rec = {"kind": "step", "step": step, "lr": lr}
    for key in ("boundary_wbce", "boundary_smooth_l1", "boundary_focal", "function_wbce", "combined"):
        rec[key] = float(np.mean([getattr(r, key) for r in reports]))
    cl = [r.contrastive for r in reports if r.contrastive is not None]
    rec["contrastive"] = float(np.mean(cl)) if cl else None
    rec["pair_count"] = int(sum(r.pair_count for r in reports))
    return rec
