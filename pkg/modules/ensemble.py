"""
Seed ensembles of environments and the estimators built on them:
Palm expectations, intensity and cell moments.
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .environment import Environment
from .errors import EnvironmentRejected
from .models import create_model, generate_environment
from .utils import jackknife_ratio, mean_stderr, parallel_map, replica_seeds


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its standard error"""
    value: float
    stderr: float
    n_seeds: int
    flagged: bool = False

    def within(self, target: float, n_sigma: float = 3.0) -> bool:
        if self.stderr == 0 or math.isnan(self.stderr):
            return abs(self.value - target) <= 1e-12 * max(1.0, abs(target))
        return abs(self.value - target) <= n_sigma * self.stderr


class EnvironmentEnsemble:
    """Environments generated from replica seeds of one master seed"""

    def __init__(self, model, d: int, L: int, master_seed: int, n_seeds: int,
                 kappa: float = 2.0, threads: int = 1):
        self.model = create_model(model) if isinstance(model, dict) else model
        self.d = d
        self.L = L
        self.master_seed = master_seed
        self.n_seeds = n_seeds
        self.kappa = kappa
        self.threads = threads
        self.seeds = replica_seeds(master_seed, n_seeds)
        self._environments: Optional[List[Environment]] = None
        self._lock = threading.Lock()

    def generate(self, seed: int) -> Environment:
        return generate_environment(self.model, self.d, self.L, seed, kappa=self.kappa)

    def environments(self) -> List[Environment]:
        with self._lock:
            if self._environments is None:
                logging.info(f"Generating {self.n_seeds} {self.model.family} environments "
                             f"(d={self.d}, L={self.L})")
                self._environments = parallel_map(self.generate, self.seeds, self.threads)
            return self._environments

    def __iter__(self):
        return iter(self.environments())

    def __len__(self) -> int:
        return self.n_seeds


# Atom-local observables: env -> one value per atom -------------------------------

def observable_one(env: Environment) -> np.ndarray:
    return np.ones(env.n_atoms)


def observable_multiplicity(env: Environment) -> np.ndarray:
    return env.multiplicity.astype(float)


def observable_lambda0(env: Environment) -> np.ndarray:
    return env.lambda_all(0)


def observable_lambda2(env: Environment) -> np.ndarray:
    return env.lambda_all(2)


OBSERVABLES: Dict[str, Callable[[Environment], np.ndarray]] = {
    'one': observable_one,
    'n': observable_multiplicity,
    'lambda0': observable_lambda0,
    'lambda2': observable_lambda2,
}


def _as_environments(ensemble) -> List[Environment]:
    if isinstance(ensemble, EnvironmentEnsemble):
        return ensemble.environments()
    return list(ensemble)


def palm_expectation(ensemble, observable) -> Estimate:
    """
    E_{P_0}[observable] estimated by the n-weighted spatial and seed average
    E[sum_x n_x F(x)] / E[sum_x n_x], with a jackknife error over seeds.

    With n == 1 (point processes) this is the atom-uniform average.
    """
    if isinstance(observable, str):
        observable = OBSERVABLES[observable]
    envs = _as_environments(ensemble)
    if not envs:
        raise ValueError("palm_expectation needs at least one environment")
    numerators, denominators = [], []
    for env in envs:
        if not env.lattice.is_identity:
            raise ValueError("Palm estimation is restricted to environments with V = identity")
        values = np.asarray(observable(env), dtype=float)
        numerators.append(math.fsum((env.multiplicity * values).tolist()))
        denominators.append(env.total_mass)
    if math.fsum(denominators) <= 0 or sum(env.n_atoms for env in envs) == 0:
        raise EnvironmentRejected("Palm estimate undefined: the samples contain no atoms")
    if len(envs) < 2:
        logging.warning("Palm estimate from a single seed has no standard error")
    value, stderr = jackknife_ratio(numerators, denominators)
    return Estimate(value, stderr, len(envs))


def intensity_estimate(ensemble) -> Estimate:
    """
    m = E[mu(cell)] / |det V| estimated by whole-torus mass per unit volume.

    A non-positive estimate is flagged: the family has no finite positive intensity.
    """
    envs = _as_environments(ensemble)
    if len(envs) < 2:
        raise ValueError("intensity_estimate needs at least two seeds")
    per_seed = [env.total_mass / env.volume for env in envs]
    value, stderr = mean_stderr(per_seed)
    flagged = not value > 0
    if flagged:
        logging.warning(f"Intensity estimate {value} is not positive: finite positive intensity fails")
    return Estimate(value, stderr, len(envs), flagged)


def cell_masses(env: Environment) -> np.ndarray:
    """mu(tau_g cell) for every cell g of the torus"""
    if env.sites is not None:
        masses = np.zeros((env.L,) * env.d)
        np.add.at(masses, tuple(env.sites.T), env.multiplicity)
        return masses.reshape(-1)
    cells = np.floor(env.lattice.inverse(env.points)).astype(np.int64) % env.L
    index = np.ravel_multi_index(tuple(cells.T), (env.L,) * env.d) if env.n_atoms else cells[:, 0]
    return np.bincount(index, weights=env.multiplicity, minlength=env.L ** env.d)


def cell_moment_estimate(ensemble, alpha: float) -> Estimate:
    """E[mu(cell)^alpha]; finiteness for some alpha > 1 relaxes the decay classes"""
    if alpha <= 1:
        raise ValueError("The cell moment condition is stated for alpha > 1")
    envs = _as_environments(ensemble)
    per_seed = [float(np.mean(cell_masses(env) ** alpha)) for env in envs]
    value, stderr = mean_stderr(per_seed)
    return Estimate(value, stderr, len(envs), flagged=not math.isfinite(value))


def ensemble_summary(ensemble) -> Dict[str, Any]:
    envs = _as_environments(ensemble)
    counts = [env.n_atoms for env in envs]
    mean, stderr = mean_stderr(counts)
    return {'n_seeds': len(envs), 'mean_atoms': mean, 'atoms_stderr': stderr}
