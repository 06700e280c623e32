"""Log-mel front end with a scalable hop.

Raising the hop by an integer ratio N lets an N-times longer window produce
(within one frame) the same number of frames as the base configuration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio import DEFAULT_SAMPLE_RATE, AudioClip
from .errors import ConfigurationError, FormatError, InputTooShortError

MELG_MAGIC = b"MELG"
ACTV_MAGIC = b"ACTV"


@dataclass(frozen=True)
class FrontendConfig:
    n_fft: int = 2048
    n_mels: int = 128
    base_hop: int = 240
    ratio_N: int = 1
    sample_rate: int = DEFAULT_SAMPLE_RATE
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ConfigurationError("n_fft must be a power of two")
        if self.ratio_N < 1 or self.base_hop < 1:
            raise ConfigurationError("ratio_N and base_hop must be positive")
        if self.effective_hop > self.n_fft:
            raise ConfigurationError(f"hop {self.effective_hop} exceeds n_fft {self.n_fft}")
        if self.n_mels < 1 or self.log_floor <= 0:
            raise ConfigurationError("n_mels and log_floor must be positive")

    @property
    def effective_hop(self) -> int:
        return self.ratio_N * self.base_hop

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.effective_hop

    @property
    def hop_ms(self) -> float:
        return 1000.0 * self.effective_hop / self.sample_rate

    def with_ratio(self, ratio_N: int) -> "FrontendConfig":
        return FrontendConfig(self.n_fft, self.n_mels, self.base_hop, ratio_N, self.sample_rate, self.log_floor)

    def n_frames(self, n_samples: int) -> int:
        """Centered framing: frame ``k`` is centered on sample ``k * hop``."""
        if n_samples < self.n_fft:
            return 0
        return 1 + n_samples // self.effective_hop


@dataclass
class MelGram:
    values: np.ndarray  # [frames, n_mels]
    frame_rate: float
    effective_hop: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    half = n_fft // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])
    return sliding_window_view(padded, n_fft)[::hop]


def stft_power(clip: AudioClip, cfg: FrontendConfig, chunk: int = 512) -> np.ndarray:
    """Power spectrogram ``|rfft(hann * frame)|**2``.

    Frames are centered: the signal is zero-padded by ``n_fft // 2`` on both
    sides and frame ``k`` covers samples ``[k*hop - n_fft/2, k*hop + n_fft/2)``.
    Frame counts are then ``1 + n // hop``, so scaling duration and hop by
    the same factor leaves the count unchanged.
    """
    x = clip.samples
    if len(x) < cfg.n_fft:
        raise InputTooShortError(f"{len(x)} samples < n_fft {cfg.n_fft}")
    window = get_window("hann", cfg.n_fft)
    frames = _frames(x, cfg.n_fft, cfg.effective_hop)
    out = np.empty((frames.shape[0], cfg.n_fft // 2 + 1))
    for lo in range(0, frames.shape[0], chunk):
        spec = np.fft.rfft(frames[lo:lo + chunk] * window, axis=1)
        out[lo:lo + chunk] = spec.real ** 2 + spec.imag ** 2
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _filterbank(n_fft: int, n_mels: int, sample_rate: int) -> np.ndarray:
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lo, ctr, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (bin_hz - lo) / (ctr - lo)
    down = (hi - bin_hz) / (hi - ctr)
    fb = np.maximum(0.0, np.minimum(up, down))
    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ConfigurationError(f"{empty.size} empty mel filters; n_mels={n_mels} too large for n_fft={n_fft}")
    fb /= peaks[:, None]
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Peak-normalized HTK triangular filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    return _filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate)


def mel_centers(cfg: FrontendConfig) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))[1:-1]


def melgram(clip: AudioClip, cfg: FrontendConfig) -> MelGram:
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigurationError(f"clip rate {clip.sample_rate} Hz != front-end rate {cfg.sample_rate} Hz")
    power = stft_power(clip, cfg)
    mel = power @ mel_filterbank(cfg).T
    values = np.log(np.maximum(mel, cfg.log_floor))
    return MelGram(values, cfg.frame_rate, cfg.effective_hop)


@dataclass
class FeatureStats:
    """Per-band standardization statistics."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, grams, min_std: float = 1e-3) -> "FeatureStats":
        total = None
        count = 0
        for g in grams:
            v = g.values if isinstance(g, MelGram) else g
            s = np.stack([v.sum(axis=0), (v * v).sum(axis=0)])
            total = s if total is None else total + s
            count += v.shape[0]
        if not count:
            raise ValueError("no frames to fit statistics on")
        mean = total[0] / count
        var = np.maximum(total[1] / count - mean ** 2, 0.0)
        return cls(mean, np.maximum(np.sqrt(var), min_std))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    @classmethod
    def identity(cls, n_mels: int) -> "FeatureStats":
        return cls(np.zeros(n_mels), np.ones(n_mels))


# ------------------------------------------------------------ binary dumps


def _write_matrix(path, magic: bytes, values: np.ndarray, rate: float) -> None:
    values = np.atleast_2d(np.asarray(values))
    if values.ndim != 2:
        raise ValueError("expected a matrix")
    header = magic + struct.pack("<IIf", values.shape[0], values.shape[1], rate)
    Path(path).write_bytes(header + np.ascontiguousarray(values, dtype="<f4").tobytes())


def _read_matrix(path, magic: bytes) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != magic:
        raise FormatError(f"missing {magic!r} header")
    rows, cols, rate = struct.unpack_from("<IIf", data, 4)
    body = data[16:]
    if len(body) != 4 * rows * cols:
        raise FormatError(f"payload has {len(body)} bytes, header implies {4 * rows * cols}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64), float(rate)


def write_melgram(path, gram: MelGram) -> None:
    _write_matrix(path, MELG_MAGIC, gram.values, gram.frame_rate)


def read_melgram(path) -> tuple[np.ndarray, float]:
    return _read_matrix(path, MELG_MAGIC)


def write_activations(path, activations: np.ndarray, grid_rate: float) -> None:
    """Dump ``[L, channels]`` activations (boundary first, then function probabilities)."""
    _write_matrix(path, ACTV_MAGIC, activations, grid_rate)


def read_activations(path) -> tuple[np.ndarray, float]:
    return _read_matrix(path, ACTV_MAGIC)
