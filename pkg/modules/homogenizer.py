"""
Effective homogenized matrix from periodic correctors.

For a direction a the corrector chi minimizes

    E(chi) = (1 / sum_z n_z) * sum over edges e=(z,x) of c_e (a . delta_e + chi(x) - chi(z))^2

(each unordered pair counted once, c_e = n_z r_{z,x}), which is the
ordered-pair form with the factor 1/2. The minimum is a . D a.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .cache import effective_matrix_key
from .environment import Environment
from .errors import EnvironmentRejected, InvariantViolation
from .interfaces import IResultCache
from .laws import Law
from .models import ZdNN, create_model, generate_environment
from .solvers import pcg
from .utils import mean_stderr, parallel_map, replica_seeds

PSD_TOLERANCE = 1e-10


@dataclass(frozen=True)
class CorrectorSolution:
    chi: np.ndarray
    energy: float
    upper_bound: float
    residual: float
    iterations: int


def _component_projector(env: Environment):
    """Subtract the mean on every connected component (the Laplacian null space)"""
    count, labels = connected_components(env.adjacency(), directed=False)
    sizes = np.bincount(labels, minlength=count).astype(float)

    def project(v: np.ndarray) -> np.ndarray:
        means = np.bincount(labels, weights=v, minlength=count) / sizes
        return v - means[labels]

    return project, labels, count


def laplacian_apply(env: Environment, chi: np.ndarray) -> np.ndarray:
    """(A chi)_k = sum over edges at k of c_e (chi_k - chi_other)"""
    diff = env.conductance * (chi[env.src] - chi[env.dst])
    return (np.bincount(env.src, weights=diff, minlength=env.n_atoms)
            - np.bincount(env.dst, weights=diff, minlength=env.n_atoms))


def corrector_energy(env: Environment, a: np.ndarray, chi: np.ndarray) -> float:
    g = env.disp @ a
    flux = g + chi[env.dst] - chi[env.src]
    return float(np.sum(env.conductance * flux * flux)) / env.total_mass


def corrector_solve(env: Environment, a, tol: float = 1e-10,
                    allow_disconnected: Optional[bool] = None) -> CorrectorSolution:
    """
    Solve the corrector normal equations for direction a by CG.

    Disconnected environments are accepted when the environment (or the
    caller) does not require connectivity; the gauge is then fixed per component.
    """
    a = np.asarray(a, dtype=float).reshape(env.d)
    if not np.any(a):
        raise ValueError("Corrector direction must be non-zero")
    if allow_disconnected is None:
        allow_disconnected = not env.require_connected
    project, labels, count = _component_projector(env)
    if count > 1 and not allow_disconnected:
        raise EnvironmentRejected(f"Corrector needs a connected environment, got {count} components")

    g = env.disp @ a
    cg = env.conductance * g
    b = np.bincount(env.src, weights=cg, minlength=env.n_atoms) - np.bincount(env.dst, weights=cg, minlength=env.n_atoms)
    upper = float(np.sum(env.conductance * g * g)) / env.total_mass

    if not np.any(b):
        chi = np.zeros(env.n_atoms)
        return CorrectorSolution(chi, upper, upper, 0.0, 0)

    degree = np.bincount(env.src, weights=env.conductance, minlength=env.n_atoms) + \
        np.bincount(env.dst, weights=env.conductance, minlength=env.n_atoms)
    result = pcg(lambda v: laplacian_apply(env, v), project(b), tol,
                 diagonal=degree, project=project)
    chi = result.x
    # n-weighted mean zero on each component
    weighted = np.bincount(labels, weights=env.multiplicity * chi, minlength=count)
    mass = np.bincount(labels, weights=env.multiplicity, minlength=count)
    chi = chi - (weighted / mass)[labels]
    energy = corrector_energy(env, a, chi)
    return CorrectorSolution(chi, energy, upper, result.relative_residual, result.iterations)


@dataclass
class EffectiveMatrix:
    D: np.ndarray
    residuals: Dict[str, float] = field(default_factory=dict)
    upper_bounds: Dict[str, float] = field(default_factory=dict)
    energies: Dict[str, float] = field(default_factory=dict)

    @property
    def residual_max(self) -> float:
        return max(self.residuals.values(), default=0.0)

    @property
    def upper_bound_gap(self) -> float:
        """Smallest slack E(0) - a.Da over the solved directions"""
        return min((self.upper_bounds[k] - self.energies[k] for k in self.energies), default=0.0)

    def to_dict(self) -> Dict[str, object]:
        return {'D': self.D.tolist(), 'residuals': dict(self.residuals),
                'upper_bounds': dict(self.upper_bounds), 'energies': dict(self.energies)}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> 'EffectiveMatrix':
        return cls(np.array(data['D'], dtype=float), dict(data['residuals']),
                   dict(data['upper_bounds']), dict(data['energies']))


def _directions(d: int) -> List[Tuple[str, np.ndarray]]:
    eye = np.eye(d)
    out = [(f"e{i + 1}", eye[i]) for i in range(d)]
    out += [(f"e{i + 1}+e{j + 1}", eye[i] + eye[j]) for i in range(d) for j in range(i + 1, d)]
    return out


def effective_matrix(env: Environment, tol: float = 1e-10, threads: int = 1,
                     allow_disconnected: Optional[bool] = None) -> EffectiveMatrix:
    """
    D by polarization over the directions e_i and e_i + e_j.

    Raises:
        InvariantViolation: D not PSD, or a solve above its variational bound
    """
    directions = _directions(env.d)
    solutions = parallel_map(lambda item: corrector_solve(env, item[1], tol, allow_disconnected),
                             directions, threads)
    energy = {name: sol.energy for (name, _), sol in zip(directions, solutions)}
    D = np.zeros((env.d, env.d))
    for i in range(env.d):
        D[i, i] = energy[f"e{i + 1}"]
    for i in range(env.d):
        for j in range(i + 1, env.d):
            D[i, j] = D[j, i] = 0.5 * (energy[f"e{i + 1}+e{j + 1}"] - D[i, i] - D[j, j])

    result = EffectiveMatrix(
        D, residuals={name: sol.residual for (name, _), sol in zip(directions, solutions)},
        upper_bounds={name: sol.upper_bound for (name, _), sol in zip(directions, solutions)},
        energies=energy)
    for name, value in energy.items():
        bound = result.upper_bounds[name]
        if value > bound * (1.0 + 1e-9) + 1e-14:
            raise InvariantViolation(f"Direction {name}: energy {value} exceeds its bound {bound}")
    scale = float(np.max(np.abs(D))) if D.size else 0.0
    smallest = float(np.min(np.linalg.eigvalsh(D)))
    if smallest < -PSD_TOLERANCE * max(scale, 1.0):
        raise InvariantViolation(f"Effective matrix is not PSD (smallest eigenvalue {smallest})")
    logging.debug(f"Effective matrix for {env.model_tag} seed={env.seed}: {D.tolist()}")
    return result


@dataclass
class EnsembleMatrix:
    mean: np.ndarray
    stderr: np.ndarray
    samples: List[EffectiveMatrix]
    seeds: List[int]


def ensemble_effective_matrix(model, d: int, L: int, n_seeds: int, tol: float = 1e-10,
                              master_seed: int = 0, kappa: float = 2.0, threads: int = 1,
                              cache: Optional[IResultCache] = None) -> EnsembleMatrix:
    """Seed-averaged D with componentwise standard errors"""
    if n_seeds < 2:
        raise ValueError("ensemble_effective_matrix needs at least two seeds")
    model = create_model(model) if isinstance(model, dict) else model
    seeds = replica_seeds(master_seed, n_seeds)

    def one_seed(seed: int) -> EffectiveMatrix:
        key = effective_matrix_key(model.to_dict(), d, L, seed, tol, kappa)
        if cache is not None:
            cached = cache.get(key)
            if cached is not None:
                return EffectiveMatrix.from_dict(cached)
        env = generate_environment(model, d, L, seed, kappa=kappa)
        result = effective_matrix(env, tol)
        if cache is not None:
            cache.put(key, result.to_dict())
        return result

    samples = parallel_map(one_seed, seeds, threads)
    stack = np.stack([s.D for s in samples])
    mean = np.zeros((d, d))
    stderr = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            mean[i, j], stderr[i, j] = mean_stderr(stack[:, i, j])
    return EnsembleMatrix(mean, stderr, samples, seeds)


@dataclass(frozen=True)
class DualityReport:
    d_law: float
    d_swapped: float
    product: float
    target: float
    stderr: float

    @property
    def relative_gap(self) -> float:
        return abs(self.product - self.target) / self.target


def duality_check(law: Law, L: int, n_seeds: int, master_seed: int = 0, tol: float = 1e-10,
                  threads: int = 1, cache: Optional[IResultCache] = None) -> DualityReport:
    """
    For a two-valued isotropic conductance law in d = 2, D(c1, c2) D(c2, c1) = c1 c2.
    With a fair law both factors coincide and D is close to sqrt(c1 c2).
    """
    if law.kind != 'choice' or len(law.params) != 2:
        raise ValueError("duality_check expects a two-valued law")
    c1, c2 = law.params
    forward = ensemble_effective_matrix(ZdNN(law), 2, L, n_seeds, tol, master_seed, threads=threads, cache=cache)
    backward = ensemble_effective_matrix(ZdNN(law.swapped()), 2, L, n_seeds, tol, master_seed + 1,
                                         threads=threads, cache=cache)
    d_law = float(np.trace(forward.mean)) / 2.0
    d_swapped = float(np.trace(backward.mean)) / 2.0
    err_law = float(math.hypot(forward.stderr[0, 0], forward.stderr[1, 1])) / 2.0
    err_swapped = float(math.hypot(backward.stderr[0, 0], backward.stderr[1, 1])) / 2.0
    product = d_law * d_swapped
    stderr = math.hypot(d_swapped * err_law, d_law * err_swapped)
    return DualityReport(d_law, d_swapped, product, float(c1 * c2), stderr)
