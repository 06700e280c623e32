"""Audio clips: WAV I/O, synthetic structured songs, and window cropping."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .annotations import Segment, SegmentTrack, Vocabulary
from .errors import FormatError, UnsupportedFormatError

DEFAULT_SAMPLE_RATE = 24000
CROSSFADE_SECONDS = 0.05
MIN_SECTION_SECONDS = 2.0

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


# --------------------------------------------------------------------------- WAV


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    pos, chunks = 12, {}
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise FormatError(f"truncated {cid!r} chunk")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip in [-1, 1].

    Stereo input is downmixed by averaging the channels.
    """
    chunks = _read_chunks(Path(path).read_bytes())
    if b"fmt " not in chunks or b"data" not in chunks:
        raise FormatError("missing fmt or data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise FormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(f"format tag {tag} with {bits} bits per sample")
    if rate <= 0:
        raise FormatError("sample rate must be positive")
    raw = chunks[b"data"]
    frame_bytes = dtype.itemsize * channels
    usable = len(raw) - len(raw) % frame_bytes
    pcm = np.frombuffer(raw[:usable], dtype=dtype).astype(np.float64) / scale
    pcm = pcm.reshape(-1, channels).mean(axis=1)
    return AudioClip(np.clip(pcm, -1.0, 1.0), int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a mono clip as ``float32`` (default) or ``pcm16`` WAV."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if encoding == "float32":
        payload, tag, bits = x.astype("<f4").tobytes(), _WAVE_FORMAT_IEEE_FLOAT, 32
    elif encoding == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload, tag, bits = q.tobytes(), _WAVE_FORMAT_PCM, 16
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class Timbre:
    fundamental: float
    harmonics: tuple[float, ...]
    noise_level: float  # RMS of the additive noise, linear amplitude


@dataclass(frozen=True)
class SongSpec:
    seed: int
    section_plan: tuple[tuple[str, float], ...]
    sample_rate: int = DEFAULT_SAMPLE_RATE
    timbre_map: Mapping[str, Timbre] = field(default_factory=dict)

    def __post_init__(self):
        plan = tuple((str(lab), float(dur)) for lab, dur in self.section_plan)
        object.__setattr__(self, "section_plan", plan)
        if not plan:
            raise ValueError("empty section plan")
        for label, dur in plan:
            if dur < MIN_SECTION_SECONDS:
                raise ValueError(f"section {label!r} shorter than {MIN_SECTION_SECONDS} s")
            if label not in self.timbre_map:
                raise ValueError(f"no timbre for label {label!r}")

    @property
    def duration(self) -> float:
        return sum(d for _, d in self.section_plan)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "section_plan": [[lab, dur] for lab, dur in self.section_plan],
            "timbre_map": {
                lab: {"fundamental": t.fundamental, "harmonics": list(t.harmonics), "noise_level": t.noise_level}
                for lab, t in sorted(self.timbre_map.items())
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SongSpec":
        timbres = {
            lab: Timbre(float(t["fundamental"]), tuple(float(a) for a in t["harmonics"]), float(t["noise_level"]))
            for lab, t in obj["timbre_map"].items()
        }
        plan = tuple((lab, float(dur)) for lab, dur in obj["section_plan"])
        return cls(int(obj["seed"]), plan, int(obj["sample_rate"]), timbres)


def default_timbres(labels: Sequence[str], seed: int = 0) -> dict[str, Timbre]:
    """One distinct timbre per label.

    Fundamentals sit 4 semitones apart starting at 110 Hz, each label gets
    a 4-partial amplitude profile, and the noise floor stays between -40
    and -26 dBFS.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for k, label in enumerate(labels):
        f0 = 110.0 * 2.0 ** (4 * k / 12)
        amps = rng.uniform(0.2, 1.0, size=4)
        amps = 0.6 * amps / amps.sum()
        noise_db = rng.uniform(-40.0, -26.0)
        out[label] = Timbre(round(f0, 6), tuple(round(a, 6) for a in amps), round(10 ** (noise_db / 20), 6))
    return out


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.pi * (np.arange(n) + 0.5) / n)


def synthesize_song(spec: SongSpec, vocab: Vocabulary | None = None) -> tuple[AudioClip, SegmentTrack]:
    """Render a section plan as audio plus its ground-truth track.

    Each section is its label's harmonic stack with seeded noise; adjacent
    sections are joined with a 50 ms raised-cosine crossfade.  Labels are
    interned into ``vocab`` in plan order.
    """
    if vocab is None:
        vocab = Vocabulary()
    sr = spec.sample_rate
    rng = np.random.default_rng(spec.seed)
    edges = np.concatenate([[0.0], np.cumsum([d for _, d in spec.section_plan])])
    sample_edges = np.round(edges * sr).astype(int)
    n_total = int(sample_edges[-1])
    out = np.zeros(n_total)
    xf = int(round(CROSSFADE_SECONDS * sr))
    half = xf // 2
    ramp = _raised_cosine(xf)

    for k, (label, _) in enumerate(spec.section_plan):
        timbre = spec.timbre_map[label]
        lo = sample_edges[k] - (half if k > 0 else 0)
        hi = sample_edges[k + 1] + (xf - half if k < len(spec.section_plan) - 1 else 0)
        t = np.arange(lo, hi) / sr
        phases = rng.uniform(0, 2 * np.pi, size=len(timbre.harmonics))
        sig = np.zeros(hi - lo)
        for h, (amp, ph) in enumerate(zip(timbre.harmonics, phases), start=1):
            sig += amp * np.sin(2 * np.pi * h * timbre.fundamental * t + ph)
        sig += timbre.noise_level * rng.standard_normal(hi - lo)
        if k > 0:
            sig[:xf] *= ramp
        if k < len(spec.section_plan) - 1:
            sig[-xf:] *= ramp[::-1]
        out[lo:hi] += sig

    segs = []
    for k, (label, dur) in enumerate(spec.section_plan):
        segs.append(Segment(edges[k], edges[k + 1], vocab.intern(label)))
    track = SegmentTrack(tuple(segs), float(edges[-1]))
    return AudioClip(np.clip(out, -1.0, 1.0), sr), track


# ----------------------------------------------------------------- cropping


def crop_window(clip: AudioClip, start: float, length_T: float) -> tuple[AudioClip, float]:
    """Cut ``length_T`` seconds starting at ``start``, zero-filling past the source.

    Returns the cropped clip and the applied offset in seconds.
    """
    if length_T <= 0 or start < 0:
        raise ValueError("length_T must be positive and start non-negative")
    sr = clip.sample_rate
    n = int(round(length_T * sr))
    s0 = int(round(start * sr))
    out = np.zeros(n)
    avail = clip.samples[s0:s0 + n]
    out[:len(avail)] = avail
    return AudioClip(out, sr), s0 / sr


def random_crop(
    clip: AudioClip, length_T: float, rng: np.random.Generator, quantum: int = 1
) -> tuple[AudioClip, float]:
    """Crop a uniformly placed window; offsets snap down to multiples of ``quantum`` samples."""
    if length_T <= 0:
        raise ValueError("length_T must be positive")
    offset = random_offset(clip.duration, length_T, clip.sample_rate, rng, quantum)
    return crop_window(clip, offset, length_T)


def random_offset(duration: float, length_T: float, sample_rate: int, rng: np.random.Generator, quantum: int = 1) -> float:
    span = max(0.0, duration - length_T)
    u = rng.uniform(0.0, span) if span > 0 else 0.0
    step = quantum / sample_rate
    return float(np.floor(u / step) * step)


# ------------------------------------------------------------------ corpus


LABELS = ("intro", "verse", "chorus", "bridge", "outro")


def random_plan(rng: np.random.Generator, labels: Sequence[str], n_sections: tuple[int, int], section_seconds: tuple[float, float]):
    n = int(rng.integers(n_sections[0], n_sections[1] + 1))
    plan, prev = [], None
    for _ in range(n):
        choices = [lab for lab in labels if lab != prev]
        lab = choices[int(rng.integers(len(choices)))]
        dur = round(float(rng.uniform(*section_seconds)), 1)
        plan.append((lab, max(dur, MIN_SECTION_SECONDS)))
        prev = lab
    return tuple(plan)


def synthetic_specs(
    n_songs: int,
    seed: int,
    labels: Sequence[str] = LABELS,
    n_sections: tuple[int, int] = (3, 6),
    section_seconds: tuple[float, float] = (6.0, 20.0),
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> list[SongSpec]:
    """Seeded song specs sharing one corpus-wide timbre per label.

    Adjacent sections never share a label, so every interior boundary
    is acoustically realized.
    """
    rng = np.random.default_rng(seed)
    timbres = default_timbres(labels, seed)
    return [
        SongSpec(int(seed * 100003 + i), random_plan(rng, labels, n_sections, section_seconds), sample_rate, timbres)
        for i in range(n_songs)
    ]


def write_manifest(path, specs: Sequence[SongSpec]) -> None:
    Path(path).write_text(json.dumps([s.to_json() for s in specs], indent=1))


def read_manifest(path) -> list[SongSpec]:
    return [SongSpec.from_json(obj) for obj in json.loads(Path(path).read_text())]
