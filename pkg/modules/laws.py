"""
Marginal laws for i.i.d. environment fields.

Every law is sampled by inverse CDF from a Uniform(0,1) variate, so a
value is a pure function of the counter-based uniform it is fed.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np


LAW_KINDS = ('constant', 'uniform', 'bernoulli', 'exponential', 'choice')


@dataclass(frozen=True)
class Law:
    """A named one-dimensional law"""
    kind: str
    params: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"Unknown law '{self.kind}', expected one of {LAW_KINDS}")
        if self.kind == 'uniform' and not self.params[0] <= self.params[1]:
            raise ValueError("uniform law needs a <= b")
        if self.kind == 'bernoulli' and not 0.0 <= self.params[0] <= 1.0:
            raise ValueError("bernoulli law needs 0 <= p <= 1")
        if self.kind == 'exponential' and not self.params[0] > 0:
            raise ValueError("exponential law needs a positive rate")
        if self.kind == 'choice':
            if len(self.params) != len(self.probs) or not self.params:
                raise ValueError("choice law needs matching values and probabilities")
            if abs(math.fsum(self.probs) - 1.0) > 1e-12 or min(self.probs) < 0:
                raise ValueError("choice probabilities must be non-negative and sum to 1")

    # Constructors ----------------------------------------------------------

    @classmethod
    def constant(cls, c: float) -> 'Law':
        return cls('constant', (float(c),))

    @classmethod
    def uniform(cls, a: float, b: float) -> 'Law':
        return cls('uniform', (float(a), float(b)))

    @classmethod
    def bernoulli(cls, p: float) -> 'Law':
        return cls('bernoulli', (float(p),))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> 'Law':
        return cls('exponential', (float(rate),))

    @classmethod
    def choice(cls, values, probs=None) -> 'Law':
        values = tuple(float(v) for v in values)
        if probs is None:
            probs = tuple(1.0 / len(values) for _ in values)
        return cls('choice', values, tuple(float(p) for p in probs))

    @classmethod
    def from_dict(cls, spec: Dict[str, Any]) -> 'Law':
        """Build a law from a config entry such as {"kind": "uniform", "a": 1, "b": 2}"""
        kind = spec.get('kind')
        if kind == 'constant':
            return cls.constant(spec.get('value', 1.0))
        if kind == 'uniform':
            return cls.uniform(spec['a'], spec['b'])
        if kind == 'bernoulli':
            return cls.bernoulli(spec['p'])
        if kind == 'exponential':
            return cls.exponential(spec.get('rate', 1.0))
        if kind in ('choice', 'two_point'):
            return cls.choice(spec['values'], spec.get('probs'))
        raise ValueError(f"Unknown law '{kind}', expected one of {LAW_KINDS}")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == 'constant':
            return {'kind': 'constant', 'value': self.params[0]}
        if self.kind == 'uniform':
            return {'kind': 'uniform', 'a': self.params[0], 'b': self.params[1]}
        if self.kind == 'bernoulli':
            return {'kind': 'bernoulli', 'p': self.params[0]}
        if self.kind == 'exponential':
            return {'kind': 'exponential', 'rate': self.params[0]}
        return {'kind': 'choice', 'values': list(self.params), 'probs': list(self.probs)}

    # Sampling and moments ----------------------------------------------------

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms in (0, 1)"""
        u = np.asarray(u, dtype=float)
        if self.kind == 'constant':
            return np.full(u.shape, self.params[0])
        if self.kind == 'uniform':
            a, b = self.params
            return a + (b - a) * u
        if self.kind == 'bernoulli':
            return (u < self.params[0]).astype(float)
        if self.kind == 'exponential':
            return -np.log1p(-u) / self.params[0]
        cumulative = np.cumsum(self.probs)
        cumulative[-1] = 1.0
        index = np.searchsorted(cumulative, u, side='right')
        return np.asarray(self.params)[np.minimum(index, len(self.params) - 1)]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.from_uniform(rng.random(size))

    def mean(self) -> float:
        if self.kind == 'constant':
            return self.params[0]
        if self.kind == 'uniform':
            return 0.5 * (self.params[0] + self.params[1])
        if self.kind == 'bernoulli':
            return self.params[0]
        if self.kind == 'exponential':
            return 1.0 / self.params[0]
        return math.fsum(v * p for v, p in zip(self.params, self.probs))

    def moment(self, k: float) -> float:
        """E[X^k] for the non-negative laws used as multiplicities"""
        if self.kind == 'constant':
            return self.params[0] ** k
        if self.kind == 'bernoulli':
            return self.params[0]
        if self.kind == 'choice':
            return math.fsum(p * v ** k for v, p in zip(self.params, self.probs))
        if self.kind == 'uniform':
            a, b = self.params
            if a == b:
                return a ** k
            return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
        return math.gamma(k + 1) / self.params[0] ** k

    def harmonic_mean(self) -> float:
        """(E[1/X])^{-1}; the effective conductance of a 1d chain with this law"""
        if self.kind == 'constant':
            return self.params[0]
        if self.kind == 'uniform':
            a, b = self.params
            if a == b:
                return a
            return (b - a) / math.log(b / a)
        if self.kind == 'choice':
            return 1.0 / math.fsum(p / v for v, p in zip(self.params, self.probs))
        raise ValueError(f"Harmonic mean undefined for law '{self.kind}'")

    def upper_bound(self) -> float:
        if self.kind == 'exponential':
            return math.inf
        if self.kind == 'bernoulli':
            return 1.0
        return max(self.params)

    def lower_bound(self) -> float:
        if self.kind in ('exponential', 'bernoulli'):
            return 0.0
        return min(self.params)

    def swapped(self) -> 'Law':
        """Two-point law with its values exchanged (probabilities kept in place)"""
        if self.kind != 'choice' or len(self.params) != 2:
            raise ValueError("Value swap is defined for two-point laws only")
        return Law('choice', (self.params[1], self.params[0]), self.probs)
