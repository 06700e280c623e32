"""Flat parameter storage with a named layout."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ConfigurationError


class ParamStore:
    """One contiguous float64 vector; ``index`` maps name -> (offset, shape)."""

    def __init__(self, layout: Iterable[tuple[str, tuple[int, ...]]], init_seed: int = 0):
        self.index: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in layout:
            if name in self.index:
                raise ConfigurationError(f"duplicate parameter {name!r}")
            shape = tuple(int(s) for s in shape)
            self.index[name] = (offset, shape)
            offset += int(np.prod(shape, dtype=int))
        self.flat = np.zeros(offset)
        self.init_seed = int(init_seed)

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def names(self) -> list[str]:
        return list(self.index)

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.index[name]
        n = int(np.prod(shape, dtype=int))
        return self.flat[offset:offset + n].reshape(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.view(name)

    def __setitem__(self, name: str, value) -> None:
        self.view(name)[...] = value

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, shape) for name, (_, shape) in self.index.items()]

    def copy(self) -> "ParamStore":
        out = ParamStore(self.layout(), self.init_seed)
        out.flat[:] = self.flat
        return out

    def slice_of(self, name: str) -> slice:
        offset, shape = self.index[name]
        return slice(offset, offset + int(np.prod(shape, dtype=int)))
