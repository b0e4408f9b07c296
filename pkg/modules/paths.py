"""
Kinetic Monte Carlo (Gillespie) paths of the sped-up walk eps X_{eps^{-2} t}.

The walk waits at x an exponential time of rate eps^{-2} r_x and then
jumps to y with probability r_{x,y} / r_x. Displacements are tracked
unwrapped, so mean squared displacements are not folded by the torus.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ensemble import Estimate
from .environment import Environment
from .utils import mean_stderr


class JumpTable:
    """
    Outgoing arcs of every atom, grouped by origin. Each atom keeps its own
    cumulative rate row, so an atom with a tiny hold rate is sampled as
    precisely as any other.
    """

    def __init__(self, env: Environment, epsilon: float = 1.0):
        if not 0 < epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
        scale = 1.0 / (epsilon * epsilon)
        origin = np.concatenate([env.src, env.dst])
        target = np.concatenate([env.dst, env.src])
        rate = np.concatenate([env.rate_forward, env.rate_backward]) * scale
        disp = np.concatenate([env.disp, -env.disp]) * epsilon

        order = np.argsort(origin, kind='stable')
        self.n_atoms = env.n_atoms
        self.d = env.d
        self.epsilon = epsilon
        self.target = target[order]
        self.rate = rate[order]
        self.disp = disp[order].reshape(-1, env.d)
        counts = np.bincount(origin, minlength=env.n_atoms)
        self.start = np.concatenate([[0], np.cumsum(counts)])
        self.hold_rate = np.bincount(origin, weights=rate, minlength=env.n_atoms)

        # rows padded with zero rates up to the largest out-degree
        width = max(int(counts.max(initial=0)), 1)
        slot = np.arange(self.rate.size) - np.repeat(self.start[:-1], counts)
        padded = np.zeros((env.n_atoms, width))
        padded[origin[order], slot] = self.rate
        self.row_cdf = np.cumsum(padded, axis=1)

    def choose(self, atoms: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Arc index leaving each atom, chosen with probability proportional to its rate"""
        atoms = np.asarray(atoms, dtype=np.int64)
        cdf = self.row_cdf[atoms]
        slot = np.sum(cdf <= (np.asarray(u) * cdf[:, -1])[:, None], axis=1)
        return np.minimum(self.start[atoms] + slot, self.start[atoms + 1] - 1)


@dataclass(frozen=True)
class Trajectory:
    """
    Jump times (starting at 0) and visited atoms up to the end time T.

    displacements[k] is the unwrapped position of the walk after the k-th
    jump, relative to the start, in rescaled units.
    """
    times: np.ndarray
    atoms: np.ndarray
    T: float
    displacements: np.ndarray

    @property
    def start(self) -> int:
        return int(self.atoms[0])

    @property
    def n_jumps(self) -> int:
        return int(self.times.size - 1)

    def atom_at(self, t: float) -> int:
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return int(self.atoms[np.searchsorted(self.times, t, side='right') - 1])

    def displacement_at(self, t: float) -> np.ndarray:
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return self.displacements[np.searchsorted(self.times, t, side='right') - 1]


def simulate_path(env: Environment, epsilon: float, start, T: float, rng: np.random.Generator,
                  table: Optional[JumpTable] = None) -> Trajectory:
    """
    One Gillespie trajectory of the sped-up walk from `start` up to time T.

    Args:
        start: atom index or atom position
        table: a prebuilt JumpTable for (env, epsilon), to avoid rebuilding it
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    table = table or JumpTable(env, epsilon)
    x = env.atom_index(start)
    t = 0.0
    position = np.zeros(env.d)
    times, atoms, displacements = [0.0], [x], [position.copy()]
    while True:
        rate = table.hold_rate[x]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        arc = int(table.choose(np.array([x]), np.array([rng.random()]))[0])
        x = int(table.target[arc])
        position = position + table.disp[arc]
        times.append(t)
        atoms.append(x)
        displacements.append(position.copy())
    return Trajectory(np.array(times), np.array(atoms, dtype=np.int64), T, np.array(displacements))


@dataclass(frozen=True)
class PathEnsemble:
    record_times: np.ndarray
    atoms: np.ndarray            # (paths, record times)
    displacements: np.ndarray    # (paths, record times, d)
    n_jumps: np.ndarray          # jumps made before T, per path


def simulate_ensemble(table: JumpTable, starts: np.ndarray, T: float, rng: np.random.Generator,
                      record_times: Optional[Sequence[float]] = None) -> PathEnsemble:
    """
    Independent Gillespie paths advanced together, one jump per sweep.

    The state at each record time is the state before the first jump after it,
    which gives the same law as simulate_path sampled at those times.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    record = np.array([T] if record_times is None else list(record_times), dtype=float)
    if np.any(np.diff(record) < 0) or np.any(record < 0) or np.any(record > T):
        raise ValueError("record_times must be increasing within [0, T]")
    starts = np.asarray(starts, dtype=np.int64)
    n_paths = starts.size
    atoms = starts.copy()
    position = np.zeros((n_paths, table.d))
    clock = np.zeros(n_paths)
    jumps = np.zeros(n_paths, dtype=np.int64)
    rec_atoms = np.empty((n_paths, record.size), dtype=np.int64)
    rec_disp = np.empty((n_paths, record.size, table.d))
    pending = np.zeros(n_paths, dtype=np.int64)
    active = np.arange(n_paths)

    while active.size:
        rate = table.hold_rate[atoms[active]]
        with np.errstate(divide='ignore'):
            wait = rng.standard_exponential(active.size) / rate
        next_clock = clock[active] + wait
        # record every pending time that falls before the next jump
        for j in range(record.size):
            hit = (pending[active] == j) & (record[j] < next_clock)
            if not np.any(hit):
                continue
            rows = active[hit]
            rec_atoms[rows, j] = atoms[rows]
            rec_disp[rows, j] = position[rows]
            pending[rows] += 1
        alive = next_clock <= T
        active = active[alive]
        if not active.size:
            break
        clock[active] = next_clock[alive]
        arcs = table.choose(atoms[active], rng.random(active.size))
        atoms[active] = table.target[arcs]
        position[active] += table.disp[arcs]
        jumps[active] += 1
    return PathEnsemble(record, rec_atoms, rec_disp, jumps)


def occupancy_estimate(table: JumpTable, start: int, T: float, targets: Sequence[int], n_paths: int,
                       rng: np.random.Generator) -> Estimate:
    """P(X_T in targets) from n_paths independent paths, with its binomial stderr"""
    result = simulate_ensemble(table, np.full(n_paths, start), T, rng)
    hits = np.isin(result.atoms[:, -1], np.asarray(targets)).astype(float)
    p = float(hits.mean())
    return Estimate(p, math.sqrt(max(p * (1.0 - p), 0.0) / n_paths), n_paths)


def msd_estimate(env: Environment, epsilon: float, T: float, n_paths: int, rng: np.random.Generator,
                 n_times: int = 16) -> Estimate:
    """
    Mean squared displacement per unit time, |X_t - X_0|^2 / t averaged over
    a time grid in (0, T] and over paths started from Palm-distributed atoms.
    """
    if T <= 0 or n_paths < 2:
        raise ValueError("msd_estimate needs T > 0 and at least two paths")
    table = JumpTable(env, epsilon)
    starts = rng.choice(env.n_atoms, size=n_paths, p=env.multiplicity / env.multiplicity.sum())
    grid = T * np.arange(1, n_times + 1) / n_times
    result = simulate_ensemble(table, starts, T, rng, grid)
    squared = np.sum(result.displacements ** 2, axis=2)
    per_path = np.mean(squared / grid[None, :], axis=1)
    value, stderr = mean_stderr(per_path)
    logging.debug(f"MSD/t over {n_paths} paths: {value:.5g} +/- {stderr:.2g}")
    return Estimate(value, stderr, n_paths)
