"""Conformer-style encoder with boundary, function and projection heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import ConfigurationError, ContractError
from .params import ParamStore
from .tape import Tape, Var


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 128
    n_classes: int = 5
    d_model: int = 64
    n_backbone_blocks: int = 4
    n_head_blocks: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    conv_kernel: int = 7
    stem_stride: int = 4
    proj_dim: int = 16

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.stem_stride < 1:
            raise ConfigurationError("stem_stride must be >= 1")
        if self.conv_kernel % 2 == 0:
            raise ConfigurationError("conv_kernel must be odd")
        if min(self.n_mels, self.n_classes, self.d_model, self.proj_dim, self.ff_mult) < 1:
            raise ConfigurationError("sizes must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def grid_length(self, n_frames: int) -> int:
        return -(-n_frames // self.stem_stride)

    def to_dict(self) -> dict:
        return asdict(self)


def _ff_layout(prefix, d, f):
    return [
        (f"{prefix}.ln.g", (d,)), (f"{prefix}.ln.b", (d,)),
        (f"{prefix}.w1", (d, f * d)), (f"{prefix}.b1", (f * d,)),
        (f"{prefix}.w2", (f * d, d)), (f"{prefix}.b2", (d,)),
    ]


def _att_layout(prefix, d):
    out = [(f"{prefix}.ln.g", (d,)), (f"{prefix}.ln.b", (d,))]
    for m in "qkvo":
        out += [(f"{prefix}.w{m}", (d, d)), (f"{prefix}.b{m}", (d,))]
    return out


def _conv_layout(prefix, d, k):
    return [
        (f"{prefix}.ln.g", (d,)), (f"{prefix}.ln.b", (d,)),
        (f"{prefix}.pw1", (d, 2 * d)), (f"{prefix}.pb1", (2 * d,)),
        (f"{prefix}.dw", (d, k)), (f"{prefix}.db", (d,)),
        (f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,)),
        (f"{prefix}.pw2", (d, d)), (f"{prefix}.pb2", (d,)),
    ]


def param_layout(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.ff_mult
    layout = [("stem.dw", (cfg.n_mels, cfg.stem_stride)), ("stem.pw", (cfg.n_mels, d)), ("stem.b", (d,))]
    for i in range(cfg.n_backbone_blocks):
        p = f"backbone{i}"
        layout += _ff_layout(f"{p}.ff1", d, f)
        layout += _att_layout(f"{p}.att", d)
        layout += _conv_layout(f"{p}.conv", d, cfg.conv_kernel)
        layout += _ff_layout(f"{p}.ff2", d, f)
        layout += [(f"{p}.ln_out.g", (d,)), (f"{p}.ln_out.b", (d,))]
    for i in range(cfg.n_head_blocks):
        p = f"head{i}"
        layout += _att_layout(f"{p}.att", d)
        layout += _ff_layout(f"{p}.ff", d, f)
    layout += [
        ("out.ln.g", (d,)), ("out.ln.b", (d,)),
        ("boundary.w", (d, 1)), ("boundary.b", (1,)),
        ("function.w", (d, cfg.n_classes)), ("function.b", (cfg.n_classes,)),
        ("proj.w", (d, cfg.proj_dim)), ("proj.b", (cfg.proj_dim,)),
    ]
    return layout


def init_params(cfg: EncoderConfig, seed: int = 0) -> ParamStore:
    """Glorot-uniform weights, zero biases, unit norm gains."""
    store = ParamStore(param_layout(cfg), init_seed=seed)
    rng = np.random.default_rng(seed)
    for name, shape in store.layout():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith(".g"):
            store[name] = 1.0
        elif len(shape) == 2:
            fan_in, fan_out = shape
            if leaf in ("dw",):
                fan_in = fan_out = shape[1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            store[name] = rng.uniform(-bound, bound, size=shape)
    return store


def check_params(params: ParamStore, cfg: EncoderConfig) -> None:
    if params.layout() != param_layout(cfg):
        raise ConfigurationError("parameter layout does not match the encoder config")


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class EncoderOutput(NamedTuple):
    boundary_logits: Var  # [L']
    function_logits: Var  # [L', C]
    frame_embeddings: Var  # [L', d]


def _linear(t: Tape, x: Var, prefix: str, w="w", b="b") -> Var:
    return x @ t.param(f"{prefix}.{w}") + t.param(f"{prefix}.{b}")


def _ln(t: Tape, x: Var, prefix: str) -> Var:
    return t.layernorm(x, t.param(f"{prefix}.g"), t.param(f"{prefix}.b"))


def feed_forward(t: Tape, x: Var, prefix: str) -> Var:
    h = _ln(t, x, f"{prefix}.ln")
    h = t.gelu(h @ t.param(f"{prefix}.w1") + t.param(f"{prefix}.b1"))
    return h @ t.param(f"{prefix}.w2") + t.param(f"{prefix}.b2")


def self_attention(t: Tape, x: Var, prefix: str, n_heads: int) -> Var:
    L, d = x.shape
    dh = d // n_heads
    h = _ln(t, x, f"{prefix}.ln")

    def heads(m):
        y = h @ t.param(f"{prefix}.w{m}") + t.param(f"{prefix}.b{m}")
        return y.reshape(L, n_heads, dh).transpose(1, 0, 2)

    q, k, v = heads("q"), heads("k"), heads("v")
    probs = t.qk_softmax(q, k, 1.0 / math.sqrt(dh))
    ctx = (probs @ v).transpose(1, 0, 2).reshape(L, d)
    return ctx @ t.param(f"{prefix}.wo") + t.param(f"{prefix}.bo")


def conv_module(t: Tape, x: Var, prefix: str) -> Var:
    d = x.shape[1]
    h = _ln(t, x, f"{prefix}.ln")
    h = h @ t.param(f"{prefix}.pw1") + t.param(f"{prefix}.pb1")
    h = h[:, :d] * t.sigmoid(h[:, d:])
    h = t.depthwise_conv1d(h, t.param(f"{prefix}.dw")) + t.param(f"{prefix}.db")
    h = t.gelu(_ln(t, h, f"{prefix}.ln2"))
    return h @ t.param(f"{prefix}.pw2") + t.param(f"{prefix}.pb2")


def conformer_block(t: Tape, x: Var, prefix: str, n_heads: int) -> Var:
    x = x + 0.5 * feed_forward(t, x, f"{prefix}.ff1")
    x = x + self_attention(t, x, f"{prefix}.att", n_heads)
    x = x + conv_module(t, x, f"{prefix}.conv")
    x = x + 0.5 * feed_forward(t, x, f"{prefix}.ff2")
    return _ln(t, x, f"{prefix}.ln_out")


def transformer_block(t: Tape, x: Var, prefix: str, n_heads: int) -> Var:
    x = x + self_attention(t, x, f"{prefix}.att", n_heads)
    return x + feed_forward(t, x, f"{prefix}.ff")


def stem(t: Tape, mel: Var, cfg: EncoderConfig) -> Var:
    h = t.strided_conv1d(mel, t.param("stem.dw"), cfg.stem_stride)
    h = h @ t.param("stem.pw") + t.param("stem.b")
    return h + t.constant(sinusoidal_positions(h.shape[0], cfg.d_model))


def forward(params: ParamStore, mel, cfg: EncoderConfig, tape: Tape | None = None) -> EncoderOutput:
    """Run the encoder on a ``[frames, n_mels]`` feature matrix.

    Output logits live on a grid of ``ceil(frames / stem_stride)`` steps.
    """
    if tape is None:
        tape = Tape(params)
    elif tape.params is not params:
        raise ContractError("tape is bound to a different parameter store")
    values = getattr(mel, "values", mel)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != cfg.n_mels:
        raise ConfigurationError(f"expected [frames, {cfg.n_mels}] input, got {values.shape}")
    if values.shape[0] < cfg.stem_stride:
        raise ContractError(f"need at least {cfg.stem_stride} frames")
    check_params(params, cfg)

    x = stem(tape, tape.constant(values), cfg)
    for i in range(cfg.n_backbone_blocks):
        x = conformer_block(tape, x, f"backbone{i}", cfg.n_heads)
    for i in range(cfg.n_head_blocks):
        x = transformer_block(tape, x, f"head{i}", cfg.n_heads)
    h = _ln(tape, x, "out.ln")
    boundary = _linear(tape, h, "boundary").reshape(-1)
    function = _linear(tape, h, "function")
    return EncoderOutput(boundary, function, x)


def project_embeddings(tape: Tape, frame_embeddings: Var, spans: Sequence[tuple[int, int]]) -> list[Var]:
    """Mean-pool each ``[lo, hi)`` frame span, then project to ``proj_dim``."""
    L = frame_embeddings.shape[0]
    w, b = tape.param("proj.w"), tape.param("proj.b")
    out = []
    for lo, hi in spans:
        if not 0 <= lo < hi <= L:
            raise ContractError(f"span [{lo}, {hi}) empty or outside [0, {L})")
        pooled = frame_embeddings[lo:hi].mean(axis=0, keepdims=True)
        out.append((pooled @ w + b).reshape(-1))
    return out
