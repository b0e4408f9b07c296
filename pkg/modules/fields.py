"""
Scalar fields on Z^d.

The shift action T^j is realized as an index shift: a hash-realized field
evaluates site j through the counter-based generator keyed by (seed, j),
so translating the base point is exact.
"""

import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .errors import TruncationError
from .interfaces import IScalarField
from .laws import Law
from .utils import STREAM_FIELD, STREAM_MIXTURE, counter_uniform


class HashField(IScalarField):
    """i.i.d. field with a named marginal law, hashed from (seed, site)"""

    def __init__(self, law: Law, seed: int, d: int, shift: Optional[np.ndarray] = None,
                 stream: int = STREAM_FIELD):
        self.law = law
        self.seed = int(seed)
        self.d = d
        self.stream = stream
        self.shift = np.zeros(d, dtype=np.int64) if shift is None else np.asarray(shift, dtype=np.int64)

    def values(self, sites: np.ndarray) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        return self.law.from_uniform(counter_uniform(self.seed, self.stream, sites + self.shift))

    def bound(self) -> float:
        return max(abs(self.law.upper_bound()), abs(self.law.lower_bound()))

    def shifted(self, g: np.ndarray) -> 'HashField':
        return HashField(self.law, self.seed, self.d, self.shift + np.asarray(g, dtype=np.int64), self.stream)

    def mean(self) -> float:
        return self.law.mean()

    @property
    def is_nonnegative(self) -> bool:
        return self.law.lower_bound() >= 0


class ConstantField(IScalarField):
    """f(j) = c everywhere"""

    def __init__(self, value: float, d: int):
        self.value = float(value)
        self.d = d

    def values(self, sites: np.ndarray) -> np.ndarray:
        sites = np.asarray(sites).reshape(-1, self.d)
        return np.full(sites.shape[0], self.value)

    def bound(self) -> float:
        return abs(self.value)

    def shifted(self, g: np.ndarray) -> 'ConstantField':
        return self

    def mean(self) -> float:
        return self.value

    @property
    def is_nonnegative(self) -> bool:
        return self.value >= 0


class StoredField(IScalarField):
    """Field stored as an array on the box origin + [0, shape)"""

    def __init__(self, array: np.ndarray, origin: Optional[Sequence[int]] = None):
        self.array = np.asarray(array, dtype=float)
        self.d = self.array.ndim
        self.origin = np.zeros(self.d, dtype=np.int64) if origin is None else np.asarray(origin, dtype=np.int64)

    def values(self, sites: np.ndarray) -> np.ndarray:
        idx = np.asarray(sites, dtype=np.int64).reshape(-1, self.d) - self.origin
        if idx.size and (idx.min() < 0 or np.any(idx.max(axis=0) >= self.array.shape)):
            raise TruncationError(
                f"Stored field box {self.array.shape} at origin {self.origin.tolist()} is smaller than "
                f"the truncation window; increase the box or reduce n")
        return self.array[tuple(idx.T)]

    def bound(self) -> float:
        return float(np.max(np.abs(self.array))) if self.array.size else 0.0

    def shifted(self, g: np.ndarray) -> 'StoredField':
        return StoredField(self.array, self.origin - np.asarray(g, dtype=np.int64))

    def mean(self) -> float:
        return float(self.array.mean())

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.array >= 0))


class MixtureField(IScalarField):
    """
    Non-ergodic field: a global fair coin picks one of two component laws,
    then the field is i.i.d. with that law.
    """

    def __init__(self, laws: Sequence[Law], seed: int, d: int, mix_prob: float = 0.5,
                 shift: Optional[np.ndarray] = None):
        if len(laws) != 2:
            raise ValueError("MixtureField needs exactly two component laws")
        self.laws = tuple(laws)
        self.seed = int(seed)
        self.d = d
        self.mix_prob = mix_prob
        self.shift = np.zeros(d, dtype=np.int64) if shift is None else np.asarray(shift, dtype=np.int64)
        coin = counter_uniform(self.seed, STREAM_MIXTURE, np.zeros((1, 1), dtype=np.int64))[0]
        self.component_label = 0 if coin < mix_prob else 1
        self._component = HashField(self.laws[self.component_label], self.seed, d, self.shift)

    def values(self, sites: np.ndarray) -> np.ndarray:
        return self._component.values(sites)

    def bound(self) -> float:
        return max(HashField(law, self.seed, self.d).bound() for law in self.laws)

    def shifted(self, g: np.ndarray) -> 'MixtureField':
        return MixtureField(self.laws, self.seed, self.d, self.mix_prob,
                            self.shift + np.asarray(g, dtype=np.int64))

    def conditional_mean(self) -> float:
        """E[f | invariant sigma-field] for this realization"""
        return self.laws[self.component_label].mean()

    def mean(self) -> float:
        return self.mix_prob * self.laws[0].mean() + (1 - self.mix_prob) * self.laws[1].mean()

    @property
    def is_nonnegative(self) -> bool:
        return all(law.lower_bound() >= 0 for law in self.laws)


def create_field(spec: Dict[str, Any], seed: int, d: int) -> IScalarField:
    """
    Factory for fields described in experiment configs.

    spec examples: {"kind": "hash", "law": {...}}, {"kind": "constant", "value": 1},
    {"kind": "mixture", "laws": [{...}, {...}]}
    """
    kind = spec.get('kind', 'hash')
    if kind == 'hash':
        return HashField(Law.from_dict(spec['law']), seed, d)
    if kind == 'constant':
        return ConstantField(spec.get('value', 1.0), d)
    if kind == 'mixture':
        laws = [Law.from_dict(item) for item in spec['laws']]
        return MixtureField(laws, seed, d, spec.get('mix_prob', 0.5))
    logging.error(f"Unknown field kind: {kind}")
    raise ValueError(f"Unknown field kind '{kind}'")
