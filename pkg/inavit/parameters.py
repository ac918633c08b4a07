#!/usr/bin/env python3
"""
Named parameter storage shared by every learnable component.

Components describe their parameters as ``ParamSpec`` entries keyed by a
canonical dotted name (``"sca.hand.w_q"``); ``ParameterSet`` materialises and
holds the tensors.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, default_dtype


@dataclass(frozen=True)
class ParamSpec:
    """
    Shape and initializer of one parameter.

    Attributes:
        shape (tuple): Tensor extents.
        init (str): One of 'uniform', 'zeros', 'ones', 'normal'.
        fan_in (int): Input width used by the uniform initializer bound 1/sqrt(fan_in).
    """

    shape: Tuple[int, ...]
    init: str = "uniform"
    fan_in: int = 1

    def sample(self, rng: np.random.Generator, dtype) -> np.ndarray:
        if self.init == "uniform":
            bound = 1.0 / math.sqrt(self.fan_in)
            values = rng.uniform(-bound, bound, size=self.shape)
        elif self.init == "normal":
            values = rng.normal(0.0, 0.02, size=self.shape)
        elif self.init == "zeros":
            values = np.zeros(self.shape)
        elif self.init == "ones":
            values = np.ones(self.shape)
        else:
            raise ConfigError(f"unknown initializer '{self.init}'")
        return np.asarray(values, dtype=dtype)


def linear_spec(d_in: int, d_out: int) -> ParamSpec:
    return ParamSpec((d_in, d_out), "uniform", d_in)


def norm_specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
    return {
        f"{prefix}.scale": ParamSpec((d,), "ones"),
        f"{prefix}.shift": ParamSpec((d,), "zeros"),
    }


class ParameterSet(Mapping[str, Tensor]):
    """
    An ordered mapping from canonical names to trainable tensors.

    Names iterate in sorted order so serialisation and gradient reports are
    deterministic.
    """

    def __init__(self, tensors: Mapping[str, Tensor]):
        self._tensors: Dict[str, Tensor] = {
            name: tensors[name] for name in sorted(tensors)
        }

    @classmethod
    def initialize(
        cls,
        specs: Mapping[str, ParamSpec],
        seed: int,
        dtype: Optional[type] = None,
    ) -> "ParameterSet":
        """Draw every parameter from its initializer with one seeded generator."""
        rng = np.random.default_rng(seed)
        dtype = dtype or default_dtype()
        return cls(
            {
                name: Tensor(specs[name].sample(rng, dtype), requires_grad=True, name=name)
                for name in sorted(specs)
            }
        )

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParameterSet":
        return cls(
            {
                name: Tensor(np.array(value), requires_grad=True, name=name)
                for name, value in arrays.items()
            }
        )

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def dtype(self):
        first = next(iter(self._tensors.values()), None)
        return first.dtype if first is not None else default_dtype()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def astype(self, dtype) -> "ParameterSet":
        return type(self).from_arrays(
            {name: t.data.astype(dtype) for name, t in self._tensors.items()}
        )

    def replace(self, arrays: Mapping[str, np.ndarray]) -> "ParameterSet":
        """Return a new set with the given tensors swapped in."""
        merged = self.arrays()
        merged.update(arrays)
        return type(self).from_arrays(merged)
