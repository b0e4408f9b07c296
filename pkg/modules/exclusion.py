"""
Symmetric simple exclusion on an environment with n == 1 and symmetric rates,
simulated through its stirring representation: every edge exchanges the
occupations of its endpoints at rate eps^{-2} r_{x,y}. On the diffusive
clock a run of length T covers physical time eps^{-2} T.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .environment import Environment
from .errors import ConfigError, EnvironmentRejected, InvariantViolation
from .models import generate_environment
from .reference import heat_pde_torus
from .utils import mean_stderr, parallel_map, replica_seed, replica_seeds


def _check_environment(env: Environment):
    if not np.all(env.multiplicity == 1.0):
        raise EnvironmentRejected("Exclusion needs unit multiplicities (n == 1)")
    if not np.array_equal(env.rate_forward, env.rate_backward):
        raise EnvironmentRejected("Exclusion needs symmetric rates r_{x,y} = r_{y,x}")


@dataclass(eq=False)
class ExclusionState:
    """Occupation bits on the atoms of env at a diffusive time"""
    eta: np.ndarray
    time: float
    env: Environment

    def __post_init__(self):
        _check_environment(self.env)
        eta = np.asarray(self.eta)
        if eta.shape != (self.env.n_atoms,) or not np.all((eta == 0) | (eta == 1)):
            raise ValueError("eta must hold one bit per atom")
        self.eta = eta.astype(np.int8)

    @property
    def particles(self) -> int:
        return int(self.eta.sum())


@dataclass
class StirringEvents:
    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray


def draw_events(env: Environment, T: float, epsilon: float, rng: np.random.Generator,
                with_times: bool = False) -> StirringEvents:
    """Poisson stirring clock on [0, T]: edges chosen proportionally to their rate"""
    rate = env.conductance / (epsilon * epsilon)
    total = float(rate.sum())
    n_events = int(rng.poisson(total * T)) if total > 0 and T > 0 else 0
    cumulative = np.cumsum(rate)
    chosen = np.searchsorted(cumulative, rng.random(n_events) * total, side='right')
    chosen = np.minimum(chosen, max(env.n_edges - 1, 0))
    times = np.sort(rng.random(n_events) * T) if with_times else np.empty(0)
    return StirringEvents(times, env.src[chosen], env.dst[chosen])


def sep_run(env: Environment, eta0: np.ndarray, T: float, epsilon: float, rng: np.random.Generator,
            start_time: float = 0.0) -> ExclusionState:
    """
    Exact stirring dynamics from eta0 for diffusive time T.

    Raises:
        EnvironmentRejected: n != 1 or asymmetric rates
        InvariantViolation: particle number changed
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    state = ExclusionState(eta0, start_time, env)
    events = draw_events(env, T, epsilon, rng)
    eta = state.eta.tolist()
    for x, y in zip(events.src.tolist(), events.dst.tolist()):
        eta[x], eta[y] = eta[y], eta[x]
    result = ExclusionState(np.array(eta, dtype=np.int8), start_time + T, env)
    if result.particles != state.particles:
        raise InvariantViolation(f"Particle number changed from {state.particles} to {result.particles}")
    return result


def coupled_run(env: Environment, eta_low: np.ndarray, eta_high: np.ndarray, T: float, epsilon: float,
                rng: np.random.Generator) -> Tuple[ExclusionState, ExclusionState, bool]:
    """
    Run two initial conditions with the same exchanges. Returns both final
    states and whether eta_low <= eta_high held after every event.
    """
    low = ExclusionState(eta_low, 0.0, env)
    high = ExclusionState(eta_high, 0.0, env)
    if np.any(low.eta > high.eta):
        raise ValueError("coupled_run expects eta_low <= eta_high")
    events = draw_events(env, T, epsilon, rng)
    a = low.eta.tolist()
    b = high.eta.tolist()
    ordered = True
    for x, y in zip(events.src.tolist(), events.dst.tolist()):
        a[x], a[y] = a[y], a[x]
        b[x], b[y] = b[y], b[x]
        if a[x] > b[x] or a[y] > b[y]:
            ordered = False
    return (ExclusionState(np.array(a, dtype=np.int8), T, env),
            ExclusionState(np.array(b, dtype=np.int8), T, env), ordered)


def occupation_time_average(env: Environment, eta0: np.ndarray, T: float, epsilon: float,
                            rng: np.random.Generator) -> np.ndarray:
    """(1/T) * time each atom spends occupied over [0, T]"""
    if T <= 0:
        raise ValueError("T must be positive")
    state = ExclusionState(eta0, 0.0, env)
    events = draw_events(env, T, epsilon, rng, with_times=True)
    eta = state.eta.tolist()
    occupied = [0.0] * env.n_atoms
    since = [0.0] * env.n_atoms
    for t, x, y in zip(events.times.tolist(), events.src.tolist(), events.dst.tolist()):
        if eta[x] == eta[y]:
            continue
        for site in (x, y):
            if eta[site]:
                occupied[site] += t - since[site]
            else:
                since[site] = t
        eta[x], eta[y] = eta[y], eta[x]
    for site in range(env.n_atoms):
        if eta[site]:
            occupied[site] += T - since[site]
    return np.array(occupied) / T


def tagged_hitting_time(env: Environment, start: int, target: int, T: float, epsilon: float,
                        rng: np.random.Generator) -> float:
    """
    First time a lone particle started at `start` is carried onto `target`
    by the stirring exchanges; inf if that does not happen by T.
    """
    _check_environment(env)
    if start == target:
        return 0.0
    events = draw_events(env, T, epsilon, rng, with_times=True)
    x = int(start)
    for t, a, b in zip(events.times.tolist(), events.src.tolist(), events.dst.tolist()):
        if a == x:
            x = b
        elif b == x:
            x = a
        else:
            continue
        if x == target:
            return t
    return math.inf


def empirical_profile(state: ExclusionState, epsilon: float, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """<pi^eps, phi> = eps^d sum_x eta(x) phi(eps x)"""
    occupied = state.eta.astype(bool)
    if not np.any(occupied):
        return 0.0
    positions = state.env.points[occupied] * epsilon
    values = np.asarray(phi(positions), dtype=float).reshape(-1)
    return epsilon ** state.env.d * math.fsum(values.tolist())


# ---------------------------------------------------------------------------
# Unit-torus profiles and test functions
# ---------------------------------------------------------------------------

TORUS_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'one': lambda x: np.ones(x.shape[0]),
    'sin': lambda x: np.sin(2.0 * math.pi * x[:, 0]),
    'cos': lambda x: np.cos(2.0 * math.pi * x[:, 0]),
}


def torus_profile(spec) -> Callable[[np.ndarray], np.ndarray]:
    """
    Initial density on the unit torus: {"kind": "constant", "p": p} or
    {"kind": "sine", "mean": a, "amplitude": b} for a + b sin(2 pi x_1).
    """
    kind = spec.get('kind')
    if kind == 'constant':
        p = float(spec['p'])
        if not 0 <= p <= 1:
            raise ConfigError('rho0.p', "density must lie in [0, 1]")
        return lambda x: np.full(x.shape[0], p)
    if kind == 'sine':
        a, b = float(spec['mean']), float(spec['amplitude'])
        if a - abs(b) < 0 or a + abs(b) > 1:
            raise ConfigError('rho0', "sine profile leaves [0, 1]")
        return lambda x: a + b * np.sin(2.0 * math.pi * x[:, 0])
    raise ConfigError('rho0.kind', f"Unknown profile '{kind}', expected 'constant' or 'sine'")


def _torus_grid(d: int, M: int) -> np.ndarray:
    axis = np.arange(M) / M
    return np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)


@dataclass
class HydroReport:
    rows: List[Dict[str, object]] = field(default_factory=list)
    m_hat: float = 1.0
    D_hat: Optional[np.ndarray] = None

    def max_gap(self, t: Optional[float] = None) -> float:
        gaps = [row['gap'] for row in self.rows if t is None or row['t'] == t]
        return max(gaps, default=0.0)

    def within_stderr(self, n_sigma: float = 3.0) -> bool:
        return all(row['gap'] <= n_sigma * row['stderr'] + 1e-12 for row in self.rows)


def hydro_check(model, d: int, L: int, rho0: Callable[[np.ndarray], np.ndarray], t_grid: Sequence[float],
                phis: Mapping[str, Callable[[np.ndarray], np.ndarray]], epsilon: float, n_seeds: int,
                D_hat, master_seed: int = 0, grid_points: int = 256, threads: int = 1) -> HydroReport:
    """
    Seed-averaged <pi^eps_t, phi> against m_hat * int rho(t) phi, where rho solves
    the heat equation with D_hat on the unit torus from rho0.

    Initial occupations are independent Bernoulli(rho0(eps x)).
    """
    if abs(epsilon * L - 1.0) > 1e-12:
        raise ValueError("hydro_check works on the unit torus: eps * L must equal 1")
    times = sorted(float(t) for t in t_grid)
    if not times or times[0] < 0:
        raise ValueError("t_grid must hold non-negative times")
    seeds = replica_seeds(master_seed, n_seeds)

    def one_seed(seed: int) -> Tuple[float, Dict[Tuple[float, str], float]]:
        env = generate_environment(model, d, L, seed)
        _check_environment(env)
        rng = np.random.default_rng(replica_seed(seed, 1))
        eta = (rng.random(env.n_atoms) < rho0(env.points * epsilon)).astype(np.int8)
        state = ExclusionState(eta, 0.0, env)
        values = {}
        for t in times:
            state = sep_run(env, state.eta, t - state.time, epsilon, rng, start_time=state.time)
            for name, phi in phis.items():
                values[(t, name)] = empirical_profile(state, epsilon, phi)
        return env.total_mass / env.volume, values

    results = parallel_map(one_seed, seeds, threads)
    m_hat = float(np.mean([mass for mass, _ in results]))
    D = np.atleast_2d(np.asarray(D_hat, dtype=float))
    grid = _torus_grid(d, grid_points)
    rho_grid = rho0(grid).reshape((grid_points,) * d)

    report = HydroReport(m_hat=m_hat, D_hat=D)
    for t in times:
        rho_t = heat_pde_torus(D, rho_grid, t).reshape(-1)
        for name, phi in phis.items():
            reference = m_hat * float(np.mean(rho_t * phi(grid)))
            mean, stderr = mean_stderr([values[(t, name)] for _, values in results])
            report.rows.append({'t': t, 'phi_id': name, 'empirical': mean, 'reference': reference,
                                'gap': abs(mean - reference), 'stderr': stderr, 'seed_count': n_seeds})
    logging.info(f"Hydrodynamic check: max gap {report.max_gap():.4g} over {len(report.rows)} rows")
    return report
