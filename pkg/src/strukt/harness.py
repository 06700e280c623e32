"""Ablation grids over (T, N, contrastive) and the attention cost profiler."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .audio import AudioClip
from .corpus import Corpus
from .errors import ConfigurationError
from .frontend import FrontendConfig, melgram
from .nn.encoder import EncoderConfig, forward, init_params
from .nn.tape import Tape
from .postprocess import PeakPickConfig
from .trainer import TrainConfig, evaluate_model, train

log = logging.getLogger(__name__)

COST_COLUMNS = ("T", "N", "seq_len", "time_per_batch", "analytic_flops",
                "analytic_activation_floats", "attention_activation_floats", "peak_param_floats")
ABLATION_COLUMNS = ("T", "N", "cl", "repeat", "seed", "ACC", "HR.5F", "HR3F", "time_per_batch", "status")

DEFAULT_T_VALUES = (8, 16, 24, 32, 48, 96)
DEFAULT_N_VALUES = (1, 2, 3, 4, 5)


# ------------------------------------------------------------- analytic model


def _ff_counts(L, d, f):
    flops = 8 * L * d + 2 * L * f * d * d + L * f * d + 10 * L * f * d + 2 * L * d * f * d + L * d
    acts = L * d + L * f * d + L * f * d + L * f * d + L * d + L * d
    return flops, acts


def _attention_counts(L, d, H):
    dh = d // H
    flops = 8 * L * d + 3 * (2 * L * d * d + L * d)
    acts = L * d + 3 * (L * d + L * d + L * d + L * d)
    flops += 2 * H * L * L * dh + 5 * H * L * L
    acts += H * L * L
    flops += 2 * L * d * L + 2 * L * d * d + L * d
    acts += L * d * 5
    return flops, acts


def _conv_counts(L, d, K):
    flops = 8 * L * d + 4 * L * d * d + 2 * L * d + 4 * L * d + L * d + 2 * L * d * K + L * d + 8 * L * d + 10 * L * d
    flops += 2 * L * d * d + L * d
    acts = L * d + 2 * L * d + 2 * L * d + L * d + L * d + L * d + L * d + L * d + L * d + L * d + L * d + L * d + L * d
    return flops, acts


def encoder_counts(L: int, cfg: EncoderConfig) -> tuple[int, int]:
    """Forward FLOPs and activation floats of the encoder on an ``L``-step grid.

    Counts follow the per-primitive conventions of :class:`~strukt.nn.Tape`
    (matmul ``2mnk``; layernorm 8, GELU 10, sigmoid 4 per element; other
    elementwise ops 1), and depend on ``L`` only.
    """
    d, H, f, K, s, M, C = (cfg.d_model, cfg.n_heads, cfg.ff_mult, cfg.conv_kernel,
                           cfg.stem_stride, cfg.n_mels, cfg.n_classes)
    flops = 2 * L * M * s + 2 * L * d * M + L * d + L * d
    acts = L * M + L * d + L * d + L * d
    ff_f, ff_a = _ff_counts(L, d, f)
    at_f, at_a = _attention_counts(L, d, H)
    cv_f, cv_a = _conv_counts(L, d, K)
    res = L * d
    for _ in range(cfg.n_backbone_blocks):
        flops += 2 * (ff_f + res + res) + (at_f + res) + (cv_f + res) + 8 * L * d
        acts += 2 * (ff_a + res + res) + (at_a + res) + (cv_a + res) + L * d
    for _ in range(cfg.n_head_blocks):
        flops += (at_f + res) + (ff_f + res)
        acts += (at_a + res) + (ff_a + res)
    flops += 8 * L * d + 2 * L * d + L + 2 * L * d * C + L * C
    acts += L * d + L + L + L + L * C + L * C
    return int(flops), int(acts)


def attention_activation_floats(L: int, cfg: EncoderConfig) -> int:
    """The ``L x L`` attention probability buffers summed over all blocks."""
    return (cfg.n_backbone_blocks + cfg.n_head_blocks) * cfg.n_heads * L * L


def seq_len(T: float, N: int, fe: FrontendConfig, enc: EncoderConfig) -> int:
    fe = fe.with_ratio(N)
    return enc.grid_length(fe.n_frames(int(round(T * fe.sample_rate))))


# ------------------------------------------------------------------- profiler


@dataclass
class CostRow:
    T: float
    N: int
    seq_len: int
    time_per_batch: float
    analytic_flops: int
    analytic_activation_floats: int
    attention_activation_floats: int
    peak_param_floats: int

    def row(self) -> dict:
        return asdict(self)


def _profile_loss(tape: Tape, out):
    b = out.boundary_logits
    return (b * b).mean() + (out.function_logits * out.function_logits).mean()


def profile_cost(
    T: float,
    N: int,
    enc: EncoderConfig | None = None,
    batch_size: int = 1,
    fe: FrontendConfig | None = None,
    steps: int = 20,
    warmup: int = 5,
    seed: int = 0,
    time_it: bool = True,
) -> CostRow:
    """Time front end + encoder forward/backward on random audio of ``T`` s at ratio ``N``.

    ``time_per_batch`` is the median over ``steps`` timed batches after
    ``warmup`` untimed ones.  Audio generation happens outside the timer.
    """
    fe = (fe or FrontendConfig()).with_ratio(N)
    enc = enc or EncoderConfig(n_mels=fe.n_mels)
    if T * fe.sample_rate < fe.n_fft:
        raise ConfigurationError("window shorter than one frame")
    L = seq_len(T, N, fe, enc)
    flops, acts = encoder_counts(L, enc)
    params = init_params(enc, seed)
    rng = np.random.default_rng(seed)
    n = int(round(T * fe.sample_rate))
    times = []
    if time_it:
        for k in range(warmup + steps):
            clips = [AudioClip(rng.uniform(-0.5, 0.5, size=n), fe.sample_rate) for _ in range(batch_size)]
            t0 = time.perf_counter()
            for clip in clips:
                feats = melgram(clip, fe).values
                tape = Tape(params)
                out = forward(params, feats, enc, tape)
                tape.backward(_profile_loss(tape, out))
                del tape, out
            if k >= warmup:
                times.append(time.perf_counter() - t0)
    median = float(np.median(times)) if times else float("nan")
    return CostRow(T, N, L, median, flops, acts, attention_activation_floats(L, enc), params.size)


def interleaved_profile(configs: Sequence[tuple[float, int]], enc=None, batch_size=1, fe=None,
                        steps=20, warmup=5, seed=0) -> list[CostRow]:
    """Profile several (T, N) cells with their timed steps interleaved.

    Round-robin scheduling exposes every cell to the same background
    load, which matters when comparing cells against each other.
    """
    fe = fe or FrontendConfig()
    enc = enc or EncoderConfig(n_mels=fe.n_mels)
    base = [profile_cost(T, N, enc, batch_size, fe, time_it=False, seed=seed) for T, N in configs]
    times = [[] for _ in configs]
    for k in range(warmup + steps):
        for c, (T, N) in enumerate(configs):
            row = profile_cost(T, N, enc, batch_size, fe, steps=1, warmup=0, seed=seed + k)
            if k >= warmup:
                times[c].append(row.time_per_batch)
    for row, ts in zip(base, times):
        row.time_per_batch = float(np.median(ts))
    return base


def write_cost_csv(path, rows: Sequence[CostRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COST_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r.row())


# ------------------------------------------------------------------- ablation


@dataclass
class AblationSpec:
    T_values: Sequence[float] = DEFAULT_T_VALUES
    N_values: Sequence[int] = DEFAULT_N_VALUES
    cl_enabled: Sequence[bool] = (True,)
    repeats: int = 1
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not (self.T_values and self.N_values and self.cl_enabled) or self.repeats < 1:
            raise ConfigurationError("ablation axes must be non-empty")

    def cells(self):
        for T, N, cl, r in itertools.product(self.T_values, self.N_values, self.cl_enabled, range(self.repeats)):
            yield float(T), int(N), bool(cl), r

    @classmethod
    def from_dict(cls, obj: dict) -> "AblationSpec":
        base = TrainConfig.from_dict(obj.get("base", {}))
        return cls(
            tuple(obj.get("T_values", DEFAULT_T_VALUES)),
            tuple(obj.get("N_values", DEFAULT_N_VALUES)),
            tuple(bool(c) for c in obj.get("cl_enabled", (True,))),
            int(obj.get("repeats", 1)),
            base,
        )


def run_cell(T, N, cl, r, spec: AblationSpec, splits, enc, fe, peak_cfg) -> dict:
    train_set, val_set, test_set = splits
    cfg = replace(spec.base, window_T=T, ratio_N=N, contrastive=cl, seed=spec.base.seed + r)
    row = {"T": T, "N": N, "cl": int(cl), "repeat": r, "seed": cfg.seed}
    try:
        result = train(train_set, cfg, enc, fe, val_set, peak_cfg=peak_cfg)
        _, mean = evaluate_model(result.model, test_set.songs, peak_cfg)
        row.update({"ACC": mean.acc, "HR.5F": mean.hr05_f, "HR3F": mean.hr3_f,
                    "time_per_batch": result.seconds_per_step, "status": "ok"})
    except Exception as exc:  # a failed cell must not stop the grid
        log.exception("cell T=%s N=%s cl=%s r=%s failed", T, N, cl, r)
        row.update({"ACC": float("nan"), "HR.5F": float("nan"), "HR3F": float("nan"),
                    "time_per_batch": float("nan"), "status": f"error: {exc}"})
    return row


def run_ablation(
    spec: AblationSpec,
    corpus: Corpus,
    enc: EncoderConfig | None = None,
    fe: FrontendConfig | None = None,
    split_seed: int = 0,
    peak_cfg: PeakPickConfig = PeakPickConfig(),
    out_csv=None,
    workers: int = 1,
) -> list[dict]:
    """Train and test one model per grid cell on a fixed seeded split.

    Rows come back in grid order.  ``workers > 1`` runs cells in separate
    processes; use it for metric grids only, since the timing column is
    then contaminated by contention.
    """
    splits = corpus.split(split_seed)
    cells = list(spec.cells())
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(run_cell, *c, spec, splits, enc, fe, peak_cfg) for c in cells]
            rows = [f.result() for f in futures]
    else:
        rows = []
        for c in cells:
            rows.append(run_cell(*c, spec, splits, enc, fe, peak_cfg))
            log.info("cell %s done: %s", c, rows[-1])
            if out_csv:
                write_ablation_csv(out_csv, rows)
    if out_csv:
        write_ablation_csv(out_csv, rows)
    return rows


def write_ablation_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in ABLATION_COLUMNS})
