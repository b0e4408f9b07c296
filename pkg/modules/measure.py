"""
Atomic measures and their diffusive rescaling mu^eps(A) = eps^d mu(A / eps).
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .envelopes import kappa_norm
from .environment import Environment

# above this many atoms integrate() switches to exactly rounded summation
EXACT_SUM_THRESHOLD = 1_000_000


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Atoms with positive masses on a torus of side `box` (in the measure's own units)"""
    positions: np.ndarray
    masses: np.ndarray
    epsilon: float = 1.0
    box: Optional[float] = None
    kappa: float = 2.0

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if positions.shape[0] != masses.shape[0]:
            raise ValueError("positions and masses differ in length")
        if np.any(masses <= 0):
            raise ValueError("Atomic measure masses must be strictly positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if positions.shape[0] > 1 and np.unique(positions, axis=0).shape[0] != positions.shape[0]:
            raise ValueError("Atom positions must be distinct")
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'masses', masses)

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def total_mass(self) -> float:
        return math.fsum(self.masses.tolist())


def from_environment(env: Environment) -> AtomicMeasure:
    """mu_omega = sum_x n_x delta_x with positions centred on the torus"""
    return AtomicMeasure(env.centered_positions(), env.multiplicity, 1.0, float(env.L), env.kappa)


def counting_measure(d: int, lo: int, hi: int, kappa: float = 2.0) -> AtomicMeasure:
    """Unit masses on Z^d intersected with [lo, hi)^d"""
    axis = np.arange(lo, hi, dtype=float)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
    return AtomicMeasure(grid, np.ones(grid.shape[0]), 1.0, None, kappa)


def rescale(measure: AtomicMeasure, epsilon: float) -> AtomicMeasure:
    """Atoms at eps x with masses eps^d n_x"""
    if measure.epsilon != 1.0:
        raise ValueError("rescale expects an unscaled measure (epsilon = 1)")
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    box = None if measure.box is None else measure.box * epsilon
    return AtomicMeasure(measure.positions * epsilon, measure.masses * epsilon ** measure.d,
                         epsilon, box, measure.kappa)


def integrate(measure: AtomicMeasure, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """sum over atoms of mass * phi(position)"""
    if measure.n_atoms == 0:
        return 0.0
    terms = measure.masses * np.asarray(phi(measure.positions), dtype=float).reshape(-1)
    if terms.size > EXACT_SUM_THRESHOLD:
        return math.fsum(terms.tolist())
    return float(np.sum(terms))


def tail_mass(measure: AtomicMeasure, theta: Callable[[np.ndarray], np.ndarray], ell: float) -> float:
    """sum over atoms with |position| >= ell of mass * theta(|position|)"""
    if ell < 0:
        raise ValueError("ell must be non-negative")
    radii = kappa_norm(measure.positions, measure.kappa)
    mask = radii >= ell
    if not np.any(mask):
        return 0.0
    return math.fsum((measure.masses[mask] * np.asarray(theta(radii[mask]), dtype=float)).tolist())
