"""Trained-model bundle and its ``.stkm`` file format.

Layout (little-endian)::

    b"STKM"
    u32 n   + n bytes   JSON config (frontend, encoder, ramp width, init seed)
    u32 n   + n bytes   UTF-8 vocabulary, one label per line
    u32 m               number of mel bands
    f64[m] mean, f64[m] std   feature standardization
    u64 p   + f64[p]    flat parameter vector
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .annotations import Vocabulary
from .errors import ConfigurationError, FormatError
from .frontend import FeatureStats, FrontendConfig
from .nn.encoder import EncoderConfig, check_params, param_layout
from .nn.params import ParamStore

MAGIC = b"STKM"


@dataclass
class StruktModel:
    frontend: FrontendConfig
    encoder: EncoderConfig
    vocab: Vocabulary
    stats: FeatureStats
    params: ParamStore
    ramp_width: float = 1.0

    def __post_init__(self):
        if self.encoder.n_mels != self.frontend.n_mels:
            raise ConfigurationError("encoder n_mels differs from the front end")
        check_params(self.params, self.encoder)

    @property
    def grid_rate(self) -> float:
        return self.frontend.frame_rate / self.encoder.stem_stride

    def grid_length(self, n_samples: int) -> int:
        return self.encoder.grid_length(self.frontend.n_frames(n_samples))

    def config_json(self) -> dict:
        return {
            "frontend": asdict(self.frontend),
            "encoder": asdict(self.encoder),
            "ramp_width": self.ramp_width,
            "init_seed": self.params.init_seed,
        }

    def to_bytes(self) -> bytes:
        cfg = json.dumps(self.config_json(), sort_keys=True).encode()
        vocab = "".join(f"{lab}\n" for lab in self.vocab).encode("utf-8")
        out = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(vocab)), vocab]
        m = self.frontend.n_mels
        out.append(struct.pack("<I", m))
        out.append(np.asarray(self.stats.mean, dtype="<f8").tobytes())
        out.append(np.asarray(self.stats.std, dtype="<f8").tobytes())
        out.append(struct.pack("<Q", self.params.size))
        out.append(self.params.flat.astype("<f8").tobytes())
        return b"".join(out)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def from_bytes(cls, data: bytes) -> "StruktModel":
        if data[:4] != MAGIC:
            raise FormatError("not a strukt model file")
        pos = 4

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise FormatError("truncated model file")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        (n,) = struct.unpack("<I", take(4))
        cfg = json.loads(take(n))
        (n,) = struct.unpack("<I", take(4))
        vocab = Vocabulary(lab for lab in take(n).decode("utf-8").splitlines() if lab)
        (m,) = struct.unpack("<I", take(4))
        mean = np.frombuffer(take(8 * m), dtype="<f8").astype(np.float64)
        std = np.frombuffer(take(8 * m), dtype="<f8").astype(np.float64)
        (p,) = struct.unpack("<Q", take(8))
        flat = np.frombuffer(take(8 * p), dtype="<f8")
        if pos != len(data):
            raise FormatError("trailing bytes in model file")
        frontend = FrontendConfig(**cfg["frontend"])
        encoder = EncoderConfig(**cfg["encoder"])
        params = ParamStore(param_layout(encoder), init_seed=cfg.get("init_seed", 0))
        if params.size != p:
            raise FormatError(f"parameter count {p} does not match config ({params.size})")
        params.flat[:] = flat
        return cls(frontend, encoder, vocab, FeatureStats(mean, std), params, float(cfg.get("ramp_width", 1.0)))

    @classmethod
    def load(cls, path) -> "StruktModel":
        return cls.from_bytes(Path(path).read_bytes())
