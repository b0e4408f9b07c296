"""
Radial decay envelopes with analytic lattice-tail bounds.

An envelope theta is non-increasing on [0, inf). For the weighted sums
n^{-d} sum_j psi(j/n) f(j) the truncation radius R is chosen from

    n^{-d} sum_{|j|_kappa > R} theta(|j|_kappa / n)
        <= S_{d-1} a^{-d} * int_{v0}^inf (v + a h / n)^{d-1} theta(v) dv

with h = sqrt(d)/2 (half the unit-cell diagonal), a = min |x|_kappa / |x|_2,
b = max |x|_kappa / |x|_2 and v0 = a (R/b - 2h) / n. The integral is
closed-form for each family, and (v + eta)^{d-1} is split with
(v + eta)^{d-1} <= 2^{max(d-2,0)} (v^{d-1} + eta^{d-1}).
"""

import math
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy import special

from .interfaces import IEnvelope


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d"""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def norm_ratios(d: int, kappa: float):
    """(a, b) with a |x|_2 <= |x|_kappa <= b |x|_2"""
    if kappa == math.inf:
        return 1.0 / math.sqrt(d), 1.0
    if kappa >= 2:
        return d ** (1.0 / kappa - 0.5), 1.0
    return 1.0, d ** (1.0 / kappa - 0.5)


def kappa_norm(x: np.ndarray, kappa: float) -> np.ndarray:
    """Row-wise l^kappa norm"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if kappa == math.inf:
        return np.max(np.abs(x), axis=1)
    if kappa == 2:
        return np.sqrt(np.sum(x * x, axis=1))
    if kappa == 1:
        return np.sum(np.abs(x), axis=1)
    return np.sum(np.abs(x) ** kappa, axis=1) ** (1.0 / kappa)


class Envelope(IEnvelope):
    """Base class; subclasses provide the radial moment tail"""

    name = 'envelope'

    def moment_tail(self, k: int, v0: float) -> float:
        """Upper bound on int_{v0}^inf v^k theta(v) dv"""
        raise NotImplementedError

    def vanishes_beyond(self, r: float) -> bool:
        """True when theta(s) == 0 for every s > r"""
        return False

    def lattice_tail(self, R: float, n: int, d: int, kappa: float) -> float:
        if self.vanishes_beyond(R / n):
            return 0.0
        a, b = norm_ratios(d, kappa)
        h = math.sqrt(d) / 2.0
        v0 = a * (R / b - 2.0 * h) / n
        if v0 <= 0:
            return math.inf
        eta = a * h / n
        split = 2.0 ** max(d - 2, 0)
        integral = self.moment_tail(d - 1, v0)
        if d > 1:
            integral += eta ** (d - 1) * self.moment_tail(0, v0)
            integral *= split
        return sphere_area(d) * a ** (-d) * integral

    def radius_for(self, target: float, n: int, d: int, kappa: float) -> int:
        """Smallest integer radius whose lattice tail bound is <= target"""
        if target <= 0:
            raise ValueError("Truncation target must be positive")
        hi = max(1, int(math.ceil(2 * math.sqrt(d) * norm_ratios(d, kappa)[1])) + 1)
        while self.lattice_tail(hi, n, d, kappa) > target:
            hi *= 2
            if hi > 1 << 40:
                raise ValueError(f"No finite truncation radius reaches {target:g}")
        lo = hi // 2
        if lo < 1 or self.lattice_tail(lo, n, d, kappa) <= target:
            lo = 0
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.lattice_tail(mid, n, d, kappa) <= target:
                hi = mid
            else:
                lo = mid
        return hi

    def is_nonincreasing(self, radii: np.ndarray) -> bool:
        values = self(np.sort(np.asarray(radii, dtype=float)))
        return bool(np.all(np.diff(values) <= 0))

    def certificate(self, d: int, delta: float = 0.1, explore_subcritical: bool = False) -> 'DGoodCertificate':
        raise NotImplementedError


@dataclass(frozen=True)
class DGoodCertificate:
    """Partial sum plus remainder bound for sum_m m^{2d} theta(m) rho(m)^{-1}"""
    partial_sum: float
    remainder_bound: float
    terms: int
    delta: float
    certified: bool
    subcritical: bool = False

    @property
    def total_bound(self) -> float:
        return self.partial_sum + self.remainder_bound


def _partial_dgood_sum(envelope: Envelope, d: int, delta: float, terms: int) -> float:
    m = np.arange(terms + 1, dtype=float)
    values = m ** (2 * d) * envelope(m) * (1.0 + m) ** (1.0 + delta)
    return math.fsum(values.tolist())


class PowerEnvelope(Envelope):
    """theta(r) = C (1 + r)^{-beta}"""

    name = 'power'

    def __init__(self, C: float, beta: float):
        if beta <= 0:
            raise ValueError("Power envelope needs beta > 0")
        self.C = float(C)
        self.beta = float(beta)

    def __call__(self, r):
        return self.C * (1.0 + np.asarray(r, dtype=float)) ** (-self.beta)

    def moment_tail(self, k: int, v0: float) -> float:
        # v^k (1+v)^{-beta} <= (1+v)^{k-beta}
        if self.beta <= k + 1:
            return math.inf
        return self.C * (1.0 + v0) ** (k + 1 - self.beta) / (self.beta - k - 1)

    def certificate(self, d: int, delta: float = 0.1, explore_subcritical: bool = False) -> DGoodCertificate:
        critical = 2 * d + 2
        subcritical = self.beta <= critical
        if subcritical:
            return DGoodCertificate(math.nan, math.inf, 0, delta, explore_subcritical, subcritical=True)
        # rho(m) = (1+m)^{-1-delta} works for any delta < beta - 2d - 2
        eff = min(delta, 0.5 * (self.beta - critical))
        terms = 1000
        partial = _partial_dgood_sum(self, d, eff, terms)
        exponent = 2 * d + 1 + eff - self.beta
        remainder = self.C * (1.0 + terms) ** (exponent + 1) / (-(exponent + 1))
        return DGoodCertificate(partial, remainder, terms, eff, True)

    def to_dict(self) -> Dict[str, Any]:
        return {'family': 'power', 'C': self.C, 'beta': self.beta}


class GaussianEnvelope(Envelope):
    """theta(r) = C exp(-a r^2)"""

    name = 'gaussian'

    def __init__(self, C: float, a: float):
        if a <= 0:
            raise ValueError("Gaussian envelope needs a > 0")
        self.C = float(C)
        self.a = float(a)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.C * np.exp(-self.a * r * r)

    def _gamma_tail(self, p: float, v0: float) -> float:
        # int_{v0}^inf v^p exp(-a v^2) dv = a^{-(p+1)/2} Gamma((p+1)/2, a v0^2) / 2
        s = (p + 1.0) / 2.0
        upper = special.gammaincc(s, self.a * v0 * v0) * special.gamma(s)
        return 0.5 * self.a ** (-s) * upper

    def moment_tail(self, k: int, v0: float) -> float:
        return self.C * self._gamma_tail(k, v0)

    def certificate(self, d: int, delta: float = 0.1, explore_subcritical: bool = False) -> DGoodCertificate:
        p = 2 * d + 1 + delta
        # m^{2d}(1+m)^{1+delta} e^{-a m^2} is decreasing once 2 a m (1+m) > p
        start = int(math.ceil((-1 + math.sqrt(1 + 2 * p / self.a)) / 2)) + 1
        terms = max(start, 64)
        partial = _partial_dgood_sum(self, d, delta, terms)
        # (1+x)^p <= (2x)^p for x >= 1
        remainder = self.C * 2.0 ** p * self._gamma_tail(p, float(terms))
        return DGoodCertificate(partial, remainder, terms, delta, True)

    def to_dict(self) -> Dict[str, Any]:
        return {'family': 'gaussian', 'C': self.C, 'a': self.a}


class CompactEnvelope(Envelope):
    """theta(r) = C for r <= r0, 0 beyond"""

    name = 'compact'

    def __init__(self, C: float, r0: float):
        if r0 < 0:
            raise ValueError("Compact envelope needs r0 >= 0")
        self.C = float(C)
        self.r0 = float(r0)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.r0, self.C, 0.0)

    def vanishes_beyond(self, r: float) -> bool:
        return r >= self.r0

    def moment_tail(self, k: int, v0: float) -> float:
        if v0 >= self.r0:
            return 0.0
        return self.C * (self.r0 ** (k + 1) - v0 ** (k + 1)) / (k + 1)

    def lattice_tail(self, R: float, n: int, d: int, kappa: float) -> float:
        # |j|/n > R/n >= r0 means theta vanishes: the truncated sum is exact
        if R >= n * self.r0:
            return 0.0
        return super().lattice_tail(R, n, d, kappa)

    def radius_for(self, target: float, n: int, d: int, kappa: float) -> int:
        return int(math.ceil(n * self.r0))

    def certificate(self, d: int, delta: float = 0.1, explore_subcritical: bool = False) -> DGoodCertificate:
        terms = int(math.floor(self.r0)) + 1
        return DGoodCertificate(_partial_dgood_sum(self, d, delta, terms), 0.0, terms, delta, True)

    def to_dict(self) -> Dict[str, Any]:
        return {'family': 'compact', 'C': self.C, 'r0': self.r0}


def create_envelope(spec: Dict[str, Any]) -> Envelope:
    family = spec.get('family')
    if family == 'power':
        return PowerEnvelope(spec.get('C', 1.0), spec['beta'])
    if family == 'gaussian':
        return GaussianEnvelope(spec.get('C', 1.0), spec['a'])
    if family == 'compact':
        return CompactEnvelope(spec.get('C', 1.0), spec['r0'])
    raise ValueError(f"Envelope family '{family}' has no analytic tail bound")


def lattice_power_sum_tail(exponent: float, R: float, d: int, kappa: float) -> float:
    """Upper bound on sum_{j in Z^d, |j|_kappa >= R} |j|_kappa^{-exponent}"""
    if exponent <= d:
        return math.inf
    a, b = norm_ratios(d, kappa)
    h = math.sqrt(d) / 2.0
    # |j|_kappa >= a |j|_2, and |j|_2 >= |y|_2 - h on the unit cell around j
    v0 = R / b - 2.0 * h
    if v0 <= 0:
        return math.inf
    split = 2.0 ** max(d - 2, 0)
    head = v0 ** (d - exponent) / (exponent - d)
    if d > 1:
        head += h ** (d - 1) * v0 ** (1 - exponent) / (exponent - 1)
        head *= split
    return sphere_area(d) * a ** (-exponent) * head
