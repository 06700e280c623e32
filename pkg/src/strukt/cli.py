"""``strukt`` command line interface."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .annotations import Vocabulary, parse_segments
from .audio import LABELS, load_wav
from .corpus import load_corpus, synthetic_corpus, write_corpus
from .frontend import FrontendConfig, melgram, write_activations, write_melgram
from .harness import AblationSpec, interleaved_profile, run_ablation, write_cost_csv
from .metrics import CSV_COLUMNS, corpus_mean, score_tracks
from .model import StruktModel
from .nn.encoder import EncoderConfig
from .postprocess import PeakPickConfig, peak_pick, reconstruct_track
from .trainer import TrainConfig, infer_full_song, train

log = logging.getLogger("strukt")


def _load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        import tomli

        return tomli.loads(text)
    return json.loads(text)


def _add_peak_args(p):
    d = PeakPickConfig()
    p.add_argument("--max-window", type=float, default=d.max_window, help="strict-max half window (s)")
    p.add_argument("--mean-window", type=float, default=d.mean_window, help="local-mean half window (s)")
    p.add_argument("--delta", type=float, default=d.delta, help="required margin above the local mean")
    p.add_argument("--min-separation", type=float, default=d.min_separation, help="minimum boundary gap (s)")


def _peak_cfg(args) -> PeakPickConfig:
    return PeakPickConfig(args.max_window, args.mean_window, args.delta, args.min_separation)


def cmd_synth(args):
    corpus, specs = synthetic_corpus(args.n_songs, args.seed, labels=tuple(args.labels))
    write_corpus(args.out, corpus, specs)
    print(f"wrote {len(corpus)} songs to {args.out}")


def cmd_melgram(args):
    clip = load_wav(args.input)
    fe = FrontendConfig(sample_rate=clip.sample_rate, ratio_N=args.ratio,
                        n_fft=args.n_fft, n_mels=args.n_mels, base_hop=args.hop)
    gram = melgram(clip, fe)
    write_melgram(args.out, gram)
    print(f"{gram.n_frames} frames x {fe.n_mels} bands at {gram.frame_rate:.3f} fps -> {args.out}")


def cmd_segment(args):
    model = StruktModel.load(args.model)
    clip = load_wav(args.input)
    probs, logits = infer_full_song(model, clip)
    bounds = peak_pick(probs, model.grid_rate, _peak_cfg(args))
    bounds = bounds[(bounds > 0) & (bounds < clip.duration)]
    track = reconstruct_track(bounds, logits, model.grid_rate, clip.duration)
    Path(args.out).write_text(track.to_tsv(model.vocab), encoding="utf-8")
    if args.activations:
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        write_activations(args.activations, np.column_stack([probs, e / e.sum(axis=1, keepdims=True)]),
                          model.grid_rate)
    print(f"{len(track.segments)} segments -> {args.out}")


def cmd_score(args):
    vocab = Vocabulary()
    rows, reports = [], []
    ref_dir, est_dir = Path(args.ref), Path(args.est)
    for ref_path in sorted(ref_dir.glob("*.tsv")):
        est_path = est_dir / ref_path.name
        if not est_path.exists():
            log.warning("no estimate for %s", ref_path.name)
            continue
        ref = parse_segments(ref_path, None, vocab)
        est = parse_segments(est_path, ref.duration, vocab)
        rep = score_tracks(ref, est, args.grid_rate)
        reports.append(rep)
        rows.append(rep.row(ref_path.stem))
    if not reports:
        sys.exit("no matching reference/estimate pairs")
    mean = corpus_mean(reports).row("MEAN")
    Path(args.out).write_text(json.dumps({"songs": rows, "mean": mean}, indent=2))
    csv_path = Path(args.csv) if args.csv else Path(args.out).with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows + [mean])
    print(json.dumps(mean))


def _train_config(args, overrides: dict) -> TrainConfig:
    cfg = TrainConfig.from_dict(overrides.get("train", {}))
    flag_map = {"T": "window_T", "N": "ratio_N", "steps": "total_steps", "batch_size": "batch_size",
                "lr": "lr0", "seed": "seed", "eval_every": "eval_every", "max_pairs": "max_pairs"}
    changes = {field: getattr(args, flag) for flag, field in flag_map.items() if getattr(args, flag) is not None}
    if args.no_contrastive:
        changes["contrastive"] = False
    return replace(cfg, **changes)


def cmd_train(args):
    overrides = _load_config_file(args.config) if args.config else {}
    cfg = _train_config(args, overrides)
    corpus = load_corpus(args.corpus)
    train_set, val_set, _ = corpus.split(args.split_seed)
    enc = EncoderConfig(**{"n_mels": 128, "n_classes": max(len(corpus.vocab), 1), **overrides.get("encoder", {})})
    fe = FrontendConfig(**overrides.get("frontend", {}))

    def progress(rec):
        if rec["kind"] == "eval" or rec["step"] % 10 == 0:
            log.info(json.dumps(rec))

    result = train(train_set, cfg, enc, fe, val_set, args.out, args.log, progress=progress)
    if result.best_metrics is None:
        result.model.save(args.out)
    print(f"model -> {args.out} (best step {result.best_step})")


def cmd_ablate(args):
    spec_obj = json.loads(Path(args.spec).read_text())
    spec = AblationSpec.from_dict(spec_obj)
    src = spec_obj.get("corpus", {"synthetic": {"n_songs": 40, "seed": 0}})
    if "dir" in src:
        corpus = load_corpus(src["dir"])
    else:
        corpus, _ = synthetic_corpus(**src["synthetic"])
    enc = EncoderConfig(**{"n_mels": 128, "n_classes": len(corpus.vocab), **spec_obj.get("encoder", {})})
    fe = FrontendConfig(**spec_obj.get("frontend", {}))
    rows = run_ablation(spec, corpus, enc, fe, spec_obj.get("split_seed", 0), out_csv=args.out,
                        workers=args.workers)
    print(f"{len(rows)} cells -> {args.out}")


def cmd_profile(args):
    fe = FrontendConfig()
    enc = EncoderConfig(n_mels=fe.n_mels)
    cells = [(args.T, args.N)]
    if args.compare:
        cells.append((args.T / args.N, 1))
    rows = interleaved_profile(cells, enc, args.batch_size, fe, args.steps, args.warmup)
    write_cost_csv(args.out, rows)
    for r in rows:
        print(json.dumps(r.row()))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strukt", description="Music structure analysis with hop-scaled windows")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-songs", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", nargs="+", default=list(LABELS))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("melgram", help="dump a log-mel spectrogram")
    p.add_argument("input")
    p.add_argument("--ratio", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--n-fft", type=int, default=2048)
    p.add_argument("--n-mels", type=int, default=128)
    p.add_argument("--hop", type=int, default=240, help="base hop in samples")
    p.set_defaults(func=cmd_melgram)

    p = sub.add_parser("segment", help="segment and label a WAV file")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--activations", help="optional ACTV dump of head outputs")
    _add_peak_args(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("score", help="score estimated TSVs against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--grid-rate", type=float, default=10.0, help="frame rate for ACC (fps)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--T", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--no-contrastive", action="store_true")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--config", help="TOML or JSON with [train], [encoder], [frontend] tables")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run a (T, N, contrastive) grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("profile", help="time one (T, N) cell and count its cost")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--compare", action="store_true", help="also profile (T/N, 1) interleaved")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
