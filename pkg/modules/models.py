"""
Environment model families and the generate_environment factory.

Lattice families draw every random quantity from the counter-based
generator keyed by ((site + shift) mod L, edge class), which makes a
sample a pure function of (model, d, L, seed) and makes the shifted
sample equal to the translated one. Point processes use a seeded numpy
Generator instead.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .environment import Environment, LatticeMap, lattice_environment, log_environment
from .envelopes import kappa_norm, lattice_power_sum_tail
from .errors import EnvironmentRejected
from .laws import Law
from .utils import (STREAM_BOND, STREAM_CONDUCTANCE, STREAM_MULTIPLICITY, STREAM_WEIGHT,
                    counter_uniform, replica_seed)


def _site_grid(d: int, L: int) -> np.ndarray:
    shape = (L,) * d
    return np.stack(np.unravel_index(np.arange(L ** d), shape), axis=1).astype(np.int64)


def _shifted_sites(d: int, L: int, shift) -> np.ndarray:
    sites = _site_grid(d, L)
    if shift is None:
        return sites
    return np.mod(sites + np.asarray(shift, dtype=np.int64).reshape(d), L)


def _hash_law(law: Law, seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    if law.kind == 'constant':
        return np.full(keys.shape[0], law.params[0])
    return law.from_uniform(counter_uniform(seed, stream, keys))


def _check_multiplicity(law: Law):
    if law.lower_bound() <= 0:
        raise EnvironmentRejected(f"Multiplicity law {law.to_dict()} must be strictly positive")


@dataclass(frozen=True)
class ZdNN:
    """Nearest-neighbour conductances, i.i.d. per bond (optionally per axis)"""
    law: Law = Law.constant(1.0)
    multiplicity: Law = Law.constant(1.0)
    lattice: str = 'square'
    axis_laws: Optional[Tuple[Law, ...]] = None
    require_connected: bool = True

    family = 'ZdNN'

    def offsets(self, d: int) -> np.ndarray:
        if self.lattice == 'triangular':
            if d != 2:
                raise EnvironmentRejected("The triangular lattice is two-dimensional")
            return np.array([[1, 0], [0, 1], [1, -1]], dtype=np.int64)
        return np.eye(d, dtype=np.int64)

    def lattice_map(self, d: int) -> LatticeMap:
        return LatticeMap.triangular() if self.lattice == 'triangular' else LatticeMap.identity(d)

    def generate(self, d: int, L: int, seed: int, shift=None, kappa: float = 2.0) -> Environment:
        _check_multiplicity(self.multiplicity)
        offsets = self.offsets(d)
        laws = self.axis_laws or (self.law,) * offsets.shape[0]
        if len(laws) != offsets.shape[0]:
            raise EnvironmentRejected(f"Expected {offsets.shape[0]} axis laws, got {len(laws)}")
        if any(law.lower_bound() < 0 for law in laws):
            raise EnvironmentRejected("Conductance laws must be non-negative")
        keys = _shifted_sites(d, L, shift)
        conductance = np.empty((keys.shape[0], offsets.shape[0]))
        for k, law in enumerate(laws):
            labelled = np.concatenate([keys, np.full((keys.shape[0], 1), k, dtype=np.int64)], axis=1)
            conductance[:, k] = _hash_law(law, seed, STREAM_CONDUCTANCE, labelled)
        multiplicity = _hash_law(self.multiplicity, seed, STREAM_MULTIPLICITY, keys)
        return lattice_environment(
            conductance.reshape((L,) * d + (offsets.shape[0],)), multiplicity,
            seed=seed, model_tag=self.family, kappa=kappa, lattice=self.lattice_map(d),
            offsets=offsets, require_connected=self.require_connected)

    def intensity(self, d: int) -> Optional[float]:
        return self.multiplicity.mean() / self.lattice_map(d).cell_volume

    def to_dict(self) -> Dict[str, Any]:
        spec = {'family': self.family, 'law': self.law.to_dict(),
                'multiplicity': self.multiplicity.to_dict(), 'lattice': self.lattice,
                'require_connected': self.require_connected}
        if self.axis_laws:
            spec['axis_laws'] = [law.to_dict() for law in self.axis_laws]
        return spec


@dataclass(frozen=True)
class ZdLongRange:
    """c_{x,y} = w_x w_y |x - y|^{-s}, truncated below half the torus side"""
    weight_law: Law = Law.constant(1.0)
    s: float = 6.0
    multiplicity: Law = Law.constant(1.0)
    cutoff: Optional[float] = None

    family = 'ZdLongRange'

    def half_offsets(self, d: int, L: int, kappa: float) -> Tuple[np.ndarray, float]:
        radius = L / 2.0 if self.cutoff is None else min(float(self.cutoff), L / 2.0)
        span = int(math.ceil(radius))
        axis = np.arange(-span, span + 1)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
        norms = kappa_norm(grid, kappa)
        keep = (norms > 0) & (norms < radius)
        grid = grid[keep]
        # one representative per +-o pair: first non-zero coordinate positive
        first = grid[np.arange(grid.shape[0]), np.argmax(grid != 0, axis=1)]
        grid = grid[first > 0]
        order = np.lexsort(tuple(grid.T[::-1]))
        return grid[order], radius

    def generate(self, d: int, L: int, seed: int, shift=None, kappa: float = 2.0) -> Environment:
        if self.s <= d + 2:
            raise EnvironmentRejected(
                f"Long-range exponent s={self.s} violates s > d + 2 = {d + 2}; lambda_2 would diverge")
        _check_multiplicity(self.multiplicity)
        if self.weight_law.lower_bound() <= 0:
            raise EnvironmentRejected("Long-range weights must be strictly positive")
        offsets, radius = self.half_offsets(d, L, kappa)
        keys = _shifted_sites(d, L, shift)
        weights = _hash_law(self.weight_law, seed, STREAM_WEIGHT, keys)
        multiplicity = _hash_law(self.multiplicity, seed, STREAM_MULTIPLICITY, keys)
        shape = (L,) * d
        sites = _site_grid(d, L)

        n_off = offsets.shape[0]
        src = np.repeat(np.arange(L ** d), n_off)
        label = np.tile(np.arange(n_off), L ** d)
        dst = np.ravel_multi_index(tuple(np.mod(sites[src] + offsets[label], L).T), shape)
        lengths = kappa_norm(offsets, kappa)
        conductance = weights[src] * weights[dst] * lengths[label] ** (-self.s)

        w_max = self.weight_law.upper_bound()
        tail = lattice_power_sum_tail(self.s - 2.0, radius, d, kappa)
        bound = w_max * w_max / self.multiplicity.lower_bound() * tail

        return Environment(
            d=d, L=L, lattice=LatticeMap.identity(d), kappa=kappa, points=sites.astype(float),
            multiplicity=multiplicity, src=src, dst=dst, disp=offsets[label].astype(float),
            conductance=conductance, seed=seed, model_tag=self.family, edge_label=label,
            sites=sites, truncation_bound=bound)

    def intensity(self, d: int) -> Optional[float]:
        return self.multiplicity.mean()

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family, 'weight_law': self.weight_law.to_dict(), 's': self.s,
                'multiplicity': self.multiplicity.to_dict(), 'cutoff': self.cutoff}


@dataclass(frozen=True)
class PoissonPP:
    """Poisson points of intensity rate, c_{x,y} = w_x w_y exp(-|x - y| / range_scale)"""
    rate: float = 1.0
    weight_law: Law = Law.constant(1.0)
    range_scale: float = 1.0
    cutoff: Optional[float] = None
    max_retries: int = 32
    measure_only: bool = False

    family = 'PoissonPP'

    def pair_cutoff(self, L: int) -> float:
        cutoff = self.cutoff if self.cutoff is not None else 28.0 * self.range_scale
        return min(cutoff, 0.5 * L * (1.0 - 1e-9))

    def _sample(self, d: int, L: int, seed: int, kappa: float) -> Environment:
        rng = np.random.default_rng(seed)
        count = int(rng.poisson(self.rate * float(L) ** d))
        points = rng.random((count, d)) * L
        multiplicity = np.ones(count)
        if self.measure_only:
            empty = np.zeros(0, dtype=np.int64)
            return Environment(
                d=d, L=L, lattice=LatticeMap.identity(d), kappa=kappa, points=points,
                multiplicity=multiplicity, src=empty, dst=empty, disp=np.zeros((0, d)),
                conductance=np.zeros(0), seed=seed, model_tag=self.family, require_connected=False)

        weights = self.weight_law.sample(rng, count)
        cutoff = self.pair_cutoff(L)
        if count > 1:
            tree = cKDTree(points, boxsize=L)
            pairs = tree.query_pairs(r=cutoff, p=kappa, output_type='ndarray')
        else:
            pairs = np.zeros((0, 2), dtype=np.int64)
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if pairs.size else pairs.reshape(0, 2)
        src = pairs[:, 0].astype(np.int64)
        dst = pairs[:, 1].astype(np.int64)
        delta = points[dst] - points[src]
        delta -= L * np.round(delta / L)
        distance = kappa_norm(delta, kappa) if delta.size else np.zeros(0)
        conductance = weights[src] * weights[dst] * np.exp(-distance / self.range_scale)
        w_max = self.weight_law.upper_bound()
        return Environment(
            d=d, L=L, lattice=LatticeMap.identity(d), kappa=kappa, points=points,
            multiplicity=multiplicity, src=src, dst=dst, disp=delta, conductance=conductance,
            seed=seed, model_tag=self.family,
            truncation_bound=w_max * w_max * math.exp(-cutoff / self.range_scale))

    def generate(self, d: int, L: int, seed: int, shift=None, kappa: float = 2.0) -> Environment:
        if shift is not None:
            raise ValueError("PoissonPP samples do not support a base shift")
        if self.weight_law.lower_bound() <= 0 and not self.measure_only:
            raise EnvironmentRejected("PoissonPP weights must be strictly positive")
        attempt_seed = seed
        for attempt in range(self.max_retries + 1):
            env = self._sample(d, L, attempt_seed, kappa)
            if self.measure_only or env.is_connected():
                if attempt:
                    env.metadata['resampled'] = attempt
                    env.metadata['base_seed'] = seed
                return env
            logging.warning(f"PoissonPP sample seed={attempt_seed} is disconnected "
                            f"({env.component_count()} components), resampling")
            attempt_seed = replica_seed(seed, attempt + 1)
        raise EnvironmentRejected(
            f"PoissonPP(rate={self.rate}) on L={L} stayed disconnected after {self.max_retries} "
            f"resamples; use a new seed or a larger range_scale")

    def intensity(self, d: int) -> Optional[float]:
        return self.rate

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family, 'rate': self.rate, 'weight_law': self.weight_law.to_dict(),
                'range_scale': self.range_scale, 'cutoff': self.cutoff,
                'max_retries': self.max_retries, 'measure_only': self.measure_only}


@dataclass(frozen=True)
class ZdPercolation:
    """Largest open cluster of Bernoulli(p) bond percolation, unit conductances"""
    p: float = 0.75

    family = 'ZdPercolation'

    def generate(self, d: int, L: int, seed: int, shift=None, kappa: float = 2.0) -> Environment:
        keys = _shifted_sites(d, L, shift)
        open_bonds = np.empty((keys.shape[0], d))
        for k in range(d):
            labelled = np.concatenate([keys, np.full((keys.shape[0], 1), k, dtype=np.int64)], axis=1)
            open_bonds[:, k] = (counter_uniform(seed, STREAM_BOND, labelled) < self.p).astype(float)
        full = lattice_environment(open_bonds.reshape((L,) * d + (d,)), seed=seed,
                                   model_tag=self.family, kappa=kappa, require_connected=False)
        if full.n_edges == 0:
            raise EnvironmentRejected(f"Percolation sample seed={seed} has no open bonds")
        graph = coo_matrix((np.ones(full.n_edges), (full.src, full.dst)),
                           shape=(full.n_atoms, full.n_atoms))
        _, labels = connected_components(graph, directed=False)
        sizes = np.bincount(labels)
        cluster = labels == int(np.argmax(sizes))
        new_index = np.cumsum(cluster) - 1
        keep_edges = cluster[full.src] & cluster[full.dst]
        return Environment(
            d=d, L=L, lattice=full.lattice, kappa=kappa, points=full.points[cluster],
            multiplicity=full.multiplicity[cluster], src=new_index[full.src[keep_edges]],
            dst=new_index[full.dst[keep_edges]], disp=full.disp[keep_edges],
            conductance=full.conductance[keep_edges], seed=seed, model_tag=self.family,
            edge_label=full.edge_label[keep_edges], sites=full.sites[cluster],
            metadata={'cluster_fraction': float(cluster.mean())})

    def intensity(self, d: int) -> Optional[float]:
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family, 'p': self.p}


MODEL_FAMILIES = ('ZdNN', 'ZdLongRange', 'PoissonPP', 'ZdPercolation', 'StackedChains')


def create_model(spec: Dict[str, Any]):
    """Build a model from a config entry, e.g. {"family": "ZdNN", "law": {...}}"""
    family = spec.get('family')
    if family == 'ZdNN':
        axis_laws = spec.get('axis_laws')
        return ZdNN(
            law=Law.from_dict(spec.get('law', {'kind': 'constant', 'value': 1.0})),
            multiplicity=Law.from_dict(spec.get('multiplicity', {'kind': 'constant', 'value': 1.0})),
            lattice=spec.get('lattice', 'square'),
            axis_laws=tuple(Law.from_dict(item) for item in axis_laws) if axis_laws else None,
            require_connected=spec.get('require_connected', True))
    if family == 'StackedChains':
        law = Law.from_dict(spec.get('law', {'kind': 'constant', 'value': 1.0}))
        return ZdNN(law=law, axis_laws=(law, Law.constant(0.0)), require_connected=False)
    if family == 'ZdLongRange':
        return ZdLongRange(
            weight_law=Law.from_dict(spec.get('weight_law', {'kind': 'constant', 'value': 1.0})),
            s=float(spec['s']),
            multiplicity=Law.from_dict(spec.get('multiplicity', {'kind': 'constant', 'value': 1.0})),
            cutoff=spec.get('cutoff'))
    if family == 'PoissonPP':
        return PoissonPP(
            rate=float(spec['rate']),
            weight_law=Law.from_dict(spec.get('weight_law', {'kind': 'constant', 'value': 1.0})),
            range_scale=float(spec.get('range_scale', 1.0)),
            cutoff=spec.get('cutoff'),
            max_retries=int(spec.get('max_retries', 32)),
            measure_only=bool(spec.get('measure_only', False)))
    if family == 'ZdPercolation':
        return ZdPercolation(p=float(spec['p']))
    raise ValueError(f"Unknown model family '{family}', expected one of {MODEL_FAMILIES}")


def generate_environment(model, d: int, L: int, seed: int, shift=None,
                         kappa: float = 2.0) -> Environment:
    """
    Generate one environment sample; a pure function of (model, d, L, seed).

    Raises:
        EnvironmentRejected: moment condition violated or no connected sample found
        InvariantViolation: the sample fails the environment axioms
    """
    if isinstance(model, dict):
        model = create_model(model)
    if L < 2:
        raise ValueError(f"Torus side must be at least 2, got {L}")
    env = model.generate(d, L, seed, shift=shift, kappa=kappa)
    env.check_invariants()
    log_environment(env)
    return env
