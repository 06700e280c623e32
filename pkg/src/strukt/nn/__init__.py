from .encoder import (
    EncoderConfig,
    EncoderOutput,
    forward,
    init_params,
    param_layout,
    project_embeddings,
    sinusoidal_positions,
)
from .gradcheck import grad_check, relative_error
from .params import ParamStore
from .tape import Tape, Var

__all__ = [
    "EncoderConfig",
    "EncoderOutput",
    "ParamStore",
    "Tape",
    "Var",
    "forward",
    "grad_check",
    "init_params",
    "param_layout",
    "project_embeddings",
    "relative_error",
    "sinusoidal_positions",
]
