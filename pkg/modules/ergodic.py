"""
Weighted ergodic averages

    W^psi_n(f) = n^{-d} sum_{j in Z^d} psi(j / n) f(T^j omega)

with truncation radii certified by the weight's d-good envelope, the
Riemann-type constants c(psi), the smoothness defect, the maximal function
and its empirical tail.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np

from .envelopes import (CompactEnvelope, DGoodCertificate, Envelope, GaussianEnvelope,
                        PowerEnvelope, kappa_norm)
from .errors import ConfigError, InvariantViolation
from .fields import HashField, MixtureField, create_field
from .interfaces import IScalarField
from .laws import Law
from .utils import parallel_map

# sites per evaluation block when sweeping a truncation window
SLAB_SITES = 1 << 21


# ---------------------------------------------------------------------------
# Weight functions
# ---------------------------------------------------------------------------

def _psi_power(x, kappa, beta):
    return (1.0 + kappa_norm(x, kappa)) ** (-beta)


def _psi_oscillating_power(x, kappa, beta):
    return np.cos(2.0 * math.pi * x[:, 0]) * (1.0 + kappa_norm(x, kappa)) ** (-beta)


def _psi_gaussian(x, kappa):
    r = kappa_norm(x, kappa)
    return np.exp(-math.pi * r * r)


def _psi_indicator(x, kappa):
    return np.all((x >= 0) & (x < 1), axis=1).astype(float)


def _psi_tent(x, kappa):
    return np.maximum(0.0, 1.0 - kappa_norm(x, kappa))


def _psi_zero(x, kappa):
    return np.zeros(x.shape[0])


@dataclass(frozen=True)
class WeightSpec:
    """
    A weight psi with its d-good envelope theta, summability witness
    rho(m) = (1 + m)^{-1-delta} and norm index kappa.
    """
    name: str
    d: int
    params: tuple = ()
    kappa: float = 2.0
    delta: float = 0.1
    explore_subcritical: bool = False
    absolute: bool = False

    def psi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        if self.name == 'power':
            values = _psi_power(x, self.kappa, *self.params)
        elif self.name == 'oscillating_power':
            values = _psi_oscillating_power(x, self.kappa, *self.params)
        elif self.name == 'gaussian':
            values = _psi_gaussian(x, self.kappa)
        elif self.name == 'indicator':
            values = _psi_indicator(x, self.kappa)
        elif self.name == 'tent':
            values = _psi_tent(x, self.kappa)
        elif self.name == 'zero':
            values = _psi_zero(x, self.kappa)
        else:
            raise ValueError(f"Unknown weight '{self.name}'")
        return np.abs(values) if self.absolute else values

    @property
    def envelope(self) -> Envelope:
        if self.name in ('power', 'oscillating_power'):
            return PowerEnvelope(1.0, self.params[0])
        if self.name == 'gaussian':
            return GaussianEnvelope(1.0, math.pi)
        if self.name == 'indicator':
            # sup of |x|_kappa over the unit cube
            reach = 1.0 if self.kappa == math.inf else self.d ** (1.0 / self.kappa)
            return CompactEnvelope(1.0, reach)
        if self.name == 'tent':
            return CompactEnvelope(1.0, 1.0)
        return CompactEnvelope(0.0, 0.0)

    @property
    def is_nonnegative(self) -> bool:
        return self.absolute or self.name != 'oscillating_power'

    def abs_spec(self) -> 'WeightSpec':
        return WeightSpec(self.name, self.d, self.params, self.kappa, self.delta,
                          self.explore_subcritical, absolute=True)

    def certificate(self) -> DGoodCertificate:
        return self.envelope.certificate(self.d, self.delta, self.explore_subcritical)

    def check(self, n_samples: int = 100_000, seed: int = 0, radius: float = 20.0) -> DGoodCertificate:
        """
        Verify |psi| <= theta on random points, theta non-increasing on a grid,
        and the d-good summability certificate.
        """
        rng = np.random.default_rng(seed)
        directions = rng.normal(size=(n_samples, self.d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = radius * rng.random(n_samples)
        points = directions * radii[:, None]
        # include the positive orthant, where compactly supported weights live
        points[: n_samples // 2] = np.abs(points[: n_samples // 2])
        bound = self.envelope(kappa_norm(points, self.kappa))
        if np.any(np.abs(self.psi(points)) > bound * (1 + 1e-12) + 1e-300):
            raise InvariantViolation(f"Weight {self.name} exceeds its envelope")
        if not self.envelope.is_nonincreasing(np.linspace(0, 4 * radius, 4001)):
            raise InvariantViolation(f"Envelope of {self.name} is not non-increasing")
        certificate = self.certificate()
        if certificate.subcritical:
            if not self.explore_subcritical:
                raise InvariantViolation(
                    f"Weight {self.name}{self.params} is not d-good: decay must exceed 2d + 2 = {2 * self.d + 2}")
            logging.warning(f"Weight {self.name}{self.params} is below the critical exponent "
                            f"2d + 2; results are exploratory")
        elif not math.isfinite(certificate.total_bound):
            raise InvariantViolation(f"d-good sum of {self.name} is not certified finite")
        return certificate

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'params': list(self.params), 'kappa': self.kappa, 'delta': self.delta,
                'explore_subcritical': self.explore_subcritical, 'absolute': self.absolute}


WEIGHT_NAMES = ('power', 'oscillating_power', 'gaussian', 'indicator', 'tent', 'zero')


def create_weight(spec: Dict[str, Any], d: int) -> WeightSpec:
    """Build a weight from e.g. {"name": "power", "beta": 8}"""
    name = spec.get('name')
    if name not in WEIGHT_NAMES:
        raise ConfigError('weight.name', f"unknown weight '{name}', expected one of {WEIGHT_NAMES}")
    params = ()
    if name in ('power', 'oscillating_power'):
        if 'beta' not in spec:
            raise ConfigError('weight.beta', f"weight '{name}' needs a decay exponent")
        params = (float(spec['beta']),)
    return WeightSpec(name, d, params, float(spec.get('kappa', 2.0)), float(spec.get('delta', 0.1)),
                      bool(spec.get('explore_subcritical', False)))


# ---------------------------------------------------------------------------
# Lattice windows
# ---------------------------------------------------------------------------

def lattice_window(R: int, d: int, kappa: float) -> Iterator[np.ndarray]:
    """Integer points with |j|_kappa <= R, yielded in slabs of the first coordinate"""
    axis = np.arange(-R, R + 1, dtype=np.int64)
    per_slab = max(1, SLAB_SITES // max(1, (2 * R + 1) ** (d - 1)))
    for start in range(0, axis.size, per_slab):
        first = axis[start:start + per_slab]
        grids = np.meshgrid(first, *([axis] * (d - 1)), indexing='ij')
        block = np.stack(grids, axis=-1).reshape(-1, d)
        yield block[kappa_norm(block, kappa) <= R]


@dataclass(frozen=True)
class LatticeSum:
    """A truncated lattice sum with its certified truncation bound"""
    value: float
    truncation_bound: float
    radius: int
    n: int
    bound_M: float = 1.0
    heuristic: bool = False


def _tail(w: WeightSpec, R: int, n: int) -> float:
    return w.envelope.lattice_tail(R, n, w.d, w.kappa)


def _radius(w: WeightSpec, n: int, target: float) -> int:
    return w.envelope.radius_for(target, n, w.d, w.kappa)


def c_psi(w: WeightSpec, n: int, tol: float = 1e-10) -> LatticeSum:
    """n^{-d} sum_j psi(j / n), truncated where the envelope tail drops below tol"""
    if n < 1:
        raise ValueError("n must be at least 1")
    R = _radius(w, n, tol)
    partials = [float(np.sum(w.psi(block / n))) for block in lattice_window(R, w.d, w.kappa)]
    return LatticeSum(math.fsum(partials) / float(n) ** w.d, _tail(w, R, n), R, n)


def smoothness_defect(w: WeightSpec, n: int, i: int, tol: float = 1e-10) -> LatticeSum:
    """n^{-d} sum_j |psi(j/n) - psi((j + e_i)/n)| for axis i in 1..d"""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 1 <= i <= w.d:
        raise ValueError(f"axis must lie in 1..{w.d}")
    step = np.zeros(w.d)
    step[i - 1] = 1.0
    # |j| > R implies |j + e_i| > R - 1, so the tail is at most twice tail(R - 1)
    R = _radius(w, n, tol / 2.0) + 1
    partials = []
    for block in lattice_window(R, w.d, w.kappa):
        partials.append(float(np.sum(np.abs(w.psi(block / n) - w.psi((block + step) / n)))))
    bound = 2.0 * _tail(w, R - 1, n)
    return LatticeSum(math.fsum(partials) / float(n) ** w.d, bound, R, n)


def _field_bound(field_: IScalarField, bound_M: Optional[float]) -> float:
    if bound_M is not None:
        return float(bound_M)
    return float(field_.bound())


def weighted_averages(fields: Sequence[IScalarField], w: WeightSpec, n: int,
                      bound_M: Optional[float] = None, tol: float = 1e-8) -> List[LatticeSum]:
    """
    W^psi_n for several fields over one shared truncation window.

    The radius makes M * (envelope tail) < tol, M the largest field bound.
    Unbounded fields take M as the realized maximum over the window (the
    window grows until that maximum is consistent) and are flagged heuristic.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    bounds = [_field_bound(f, bound_M) for f in fields]
    M = max(bounds) if bounds else 0.0
    heuristic = not math.isfinite(M)

    def sweep(R: int):
        partials = [[] for _ in fields]
        realized = 0.0
        for block in lattice_window(R, w.d, w.kappa):
            weights = w.psi(block / n)
            for k, f in enumerate(fields):
                values = f.values(block)
                if values.size:
                    realized = max(realized, float(np.max(np.abs(values))))
                partials[k].append(float(np.sum(weights * values)))
        return partials, realized

    if not heuristic:
        R = _radius(w, n, tol / M) if M > 0 else 0
        partials, _ = sweep(R)
        used_M = M
    else:
        R = _radius(w, n, tol)
        for _ in range(8):
            partials, realized = sweep(R)
            used_M = max(realized, 1.0)
            needed = _radius(w, n, tol / used_M)
            if needed <= R:
                break
            R = needed
        logging.debug(f"Unbounded field: realized bound {used_M:.4g} over radius {R} (heuristic)")

    bound = used_M * _tail(w, R, n) if used_M > 0 else 0.0
    scale = float(n) ** w.d
    return [LatticeSum(math.fsum(p) / scale, bound, R, n, used_M, heuristic) for p in partials]


def weighted_average(field_: IScalarField, w: WeightSpec, n: int,
                     bound_M: Optional[float] = None, tol: float = 1e-8) -> LatticeSum:
    """W^psi_n(f) with its truncation bound"""
    return weighted_averages([field_], w, n, bound_M, tol)[0]


# ---------------------------------------------------------------------------
# Non-ergodic limit
# ---------------------------------------------------------------------------

@dataclass
class ConditionalLimitReport:
    c_psi: float
    targets: List[float]
    rows: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def fraction_within(self) -> float:
        if not self.rows:
            return 0.0
        return sum(1 for row in self.rows if row['within']) / len(self.rows)

    @property
    def wrong_cluster(self) -> int:
        return sum(1 for row in self.rows if row['nearer_wrong'])


def conditional_limit_check(laws: Sequence[Law], w: WeightSpec, n: int, seeds: Sequence[int],
                            rel_tol: float = 0.1, tol: float = 1e-8, threads: int = 1,
                            mix_prob: float = 0.5) -> ConditionalLimitReport:
    """
    For a two-component mixture field, check each seed's average clusters at
    c(psi) * E[f | component] of its own component.
    """
    c_value = c_psi(w, n, min(tol, 1e-10)).value
    targets = [c_value * law.mean() for law in laws]

    def one_seed(seed: int) -> Dict[str, Any]:
        mixture = MixtureField(laws, seed, w.d, mix_prob)
        result = weighted_average(mixture, w, n, tol=tol)
        own = targets[mixture.component_label]
        other = targets[1 - mixture.component_label]
        return {
            'seed': seed, 'n': n, 'label': mixture.component_label, 'value': result.value,
            'target': own, 'abs_error': abs(result.value - own),
            'truncation_bound': result.truncation_bound,
            'within': abs(result.value - own) <= rel_tol * abs(own) if own else result.value == 0,
            'nearer_wrong': own != other and abs(result.value - other) < abs(result.value - own),
        }

    report = ConditionalLimitReport(c_value, targets)
    report.rows = parallel_map(one_seed, list(seeds), threads)
    return report


# ---------------------------------------------------------------------------
# Maximal function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaximalValue:
    value: float
    argmax_n: int
    averages: tuple
    truncation_bound: float


def maximal_function(field_: IScalarField, w: WeightSpec, N: int,
                     bound_M: Optional[float] = None, tol: float = 1e-8) -> MaximalValue:
    """
    max_{1 <= n <= N} W^{|psi|}_n(f) for a non-negative field.

    The field is evaluated once over the largest window; smaller n reuse it.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if getattr(field_, 'is_nonnegative', True) is False:
        raise ValueError("The maximal function is defined for non-negative fields")
    wa = w.abs_spec()
    M = _field_bound(field_, bound_M)
    heuristic = not math.isfinite(M)
    scale_M = 1.0 if heuristic else max(M, 1e-300)
    radii = [_radius(wa, n, tol / scale_M) for n in range(1, N + 1)]
    R = max(radii)
    blocks = list(lattice_window(R, w.d, w.kappa))
    values = [field_.values(block) for block in blocks]
    if any(np.any(v < 0) for v in values):
        raise ValueError("The maximal function is defined for non-negative fields")
    realized = max((float(v.max()) for v in values if v.size), default=0.0)
    used_M = max(realized, 1.0) if heuristic else M

    averages = []
    bound = 0.0
    for n, Rn in zip(range(1, N + 1), radii):
        partials = []
        for block, v in zip(blocks, values):
            mask = kappa_norm(block, w.kappa) <= Rn
            partials.append(float(np.sum(wa.psi(block[mask] / n) * v[mask])))
        averages.append(math.fsum(partials) / float(n) ** w.d)
        bound = max(bound, used_M * _tail(wa, Rn, n))
    best = int(np.argmax(averages))
    return MaximalValue(averages[best], best + 1, tuple(averages), bound)


@dataclass
class MaximalTailTable:
    rows: List[Dict[str, float]]
    c_hat: float
    l1_norm: float
    n_seeds: int


def maximal_tail_estimate(law: Law, w: WeightSpec, N: int, alphas: Sequence[float],
                          seeds: Sequence[int], tol: float = 1e-8,
                          threads: int = 1) -> MaximalTailTable:
    """
    Empirical P(sup_n W^{|psi|}_n f > alpha) over seeds for an i.i.d. field
    with the given law; reports alpha * P and the constant C = max alpha P / ||f||_1.
    """
    if any(a <= 0 for a in alphas):
        raise ValueError("alpha grid must be positive")
    if law.lower_bound() < 0:
        raise ValueError("The maximal inequality is stated for non-negative fields")
    norm = law.mean()

    def one_seed(seed: int) -> float:
        return maximal_function(HashField(law, seed, w.d), w, N, tol=tol).value

    sups = np.asarray(parallel_map(one_seed, list(seeds), threads))
    rows = []
    for alpha in alphas:
        p_hat = float(np.mean(sups > alpha))
        rows.append({'alpha': float(alpha), 'p_hat': p_hat, 'alpha_p': alpha * p_hat,
                     'alpha_p_over_norm': alpha * p_hat / norm if norm > 0 else math.nan,
                     'seed_count': len(sups)})
    c_hat = max(row['alpha_p_over_norm'] for row in rows) if rows else math.nan
    return MaximalTailTable(rows, c_hat, norm, len(sups))


# ---------------------------------------------------------------------------
# Sample-norm deviations and condition checks
# ---------------------------------------------------------------------------

def lp_deviation(field_spec: Dict[str, Any], w: WeightSpec, n: int, p: int,
                 seeds: Sequence[int], tol: float = 1e-8, threads: int = 1) -> float:
    """(mean over seeds of |W_n - c(psi) E f|^p)^{1/p} for p in {1, 2}"""
    if p not in (1, 2):
        raise ValueError("Only the sample norms p = 1 and p = 2 are supported")
    c_value = c_psi(w, n, min(tol, 1e-10)).value

    def one_seed(seed: int) -> float:
        field_ = create_field(field_spec, seed, w.d)
        target = c_value * (field_.conditional_mean() if isinstance(field_, MixtureField) else field_.mean())
        return abs(weighted_average(field_, w, n, tol=tol).value - target) ** p

    deviations = parallel_map(one_seed, list(seeds), threads)
    return float(np.mean(deviations)) ** (1.0 / p)


@dataclass(frozen=True)
class ConditionCheck:
    n_grid: tuple
    c_values: tuple
    defects: tuple
    constant_converges: bool
    defect_vanishes: bool

    @property
    def passed(self) -> bool:
        return self.constant_converges and self.defect_vanishes


def check_conditions(w: WeightSpec, n_grid: Sequence[int], rtol: float = 1e-3,
                     tol: float = 1e-10) -> ConditionCheck:
    """
    Numerical checks on a dyadic n grid: c(psi) forms a Cauchy sequence, and the
    smoothness defect (max over axes) decreases with a Richardson-extrapolated
    limit of zero, both to relative tolerance rtol.
    """
    grid = sorted(int(n) for n in n_grid)
    if len(grid) < 2:
        raise ValueError("Condition checks need at least two values of n")
    c_values = [c_psi(w, n, tol).value for n in grid]
    defects = [max(smoothness_defect(w, n, i, tol).value for i in range(1, w.d + 1)) for n in grid]
    scale = abs(c_psi(w.abs_spec(), grid[-1], tol).value) or 1.0
    constant_converges = abs(c_values[-1] - c_values[-2]) <= rtol * max(abs(c_values[-1]), 1e-300)
    nonincreasing = all(b <= a * (1 + 1e-12) for a, b in zip(defects, defects[1:]))
    extrapolated = 2.0 * defects[-1] - defects[-2]
    defect_vanishes = nonincreasing and abs(extrapolated) <= rtol * scale
    return ConditionCheck(tuple(grid), tuple(c_values), tuple(defects), constant_converges, defect_vanishes)
