"""Song collections: synthetic generation, directory I/O, deterministic splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import SegmentTrack, Vocabulary, parse_segments
from .audio import (
    LABELS,
    AudioClip,
    SongSpec,
    load_wav,
    read_manifest,
    synthesize_song,
    synthetic_specs,
    write_manifest,
    write_wav,
)

log = logging.getLogger(__name__)


@dataclass
class Song:
    song_id: str
    clip: AudioClip
    track: SegmentTrack


@dataclass
class Corpus:
    songs: list[Song]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.songs)

    def subset(self, idx: Sequence[int]) -> "Corpus":
        return Corpus([self.songs[i] for i in idx], self.vocab)

    def split(self, seed: int, fractions=(0.7, 0.1, 0.2)) -> tuple["Corpus", "Corpus", "Corpus"]:
        """Seeded train/validation/test partition (each part keeps >= 1 song when possible)."""
        n = len(self.songs)
        order = np.random.default_rng(seed).permutation(n)
        n_val = max(1, int(round(fractions[1] * n))) if n >= 3 else 0
        n_test = max(1, int(round(fractions[2] * n))) if n >= 3 else 0
        n_train = n - n_val - n_test
        parts = np.split(order, [n_train, n_train + n_val])
        return tuple(self.subset(sorted(int(i) for i in p)) for p in parts)

    def label_seconds(self) -> np.ndarray:
        secs = np.zeros(len(self.vocab))
        for song in self.songs:
            for seg in song.track.segments:
                secs[seg.label] += seg.end - seg.start
        return secs


def synthetic_corpus(n_songs: int, seed: int, **kwargs) -> tuple[Corpus, list[SongSpec]]:
    specs = synthetic_specs(n_songs, seed, **kwargs)
    vocab = Vocabulary(kwargs.get("labels", LABELS))
    songs = []
    for i, spec in enumerate(specs):
        clip, track = synthesize_song(spec, vocab)
        songs.append(Song(f"song{i:04d}", clip, track))
    return Corpus(songs, vocab), specs


def write_corpus(out_dir, corpus: Corpus, specs: Sequence[SongSpec] | None = None) -> None:
    """Write ``<id>.wav`` + ``<id>.tsv`` per song, plus ``vocab.txt`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for song in corpus.songs:
        write_wav(out / f"{song.song_id}.wav", song.clip)
        (out / f"{song.song_id}.tsv").write_text(song.track.to_tsv(corpus.vocab), encoding="utf-8")
    corpus.vocab.save(out / "vocab.txt")
    if specs is not None:
        write_manifest(out / "manifest.json", specs)


def load_corpus(directory, vocab: Vocabulary | None = None) -> Corpus:
    """Load every ``<id>.wav`` that has a matching ``<id>.tsv``.

    If the directory has a ``manifest.json`` but no audio, songs are
    re-synthesized from it.
    """
    d = Path(directory)
    if vocab is None:
        vocab = Vocabulary.load(d / "vocab.txt") if (d / "vocab.txt").exists() else Vocabulary()
    wavs = sorted(d.glob("*.wav"))
    if not wavs and (d / "manifest.json").exists():
        songs = []
        for i, spec in enumerate(read_manifest(d / "manifest.json")):
            clip, track = synthesize_song(spec, vocab)
            songs.append(Song(f"song{i:04d}", clip, track))
        return Corpus(songs, vocab)
    songs = []
    for wav in wavs:
        tsv = wav.with_suffix(".tsv")
        if not tsv.exists():
            log.warning("skipping %s: no annotation", wav.name)
            continue
        clip = load_wav(wav)
        track = parse_segments(tsv, clip.duration, vocab)
        songs.append(Song(wav.stem, clip, track))
    return Corpus(songs, vocab)
