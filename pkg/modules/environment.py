"""
Environment: a realized point set on a periodic box with multiplicities and
symmetric-in-measure jump rates.

Rates are stored through edge conductances c_e = n_x r_{x,y} = n_y r_{y,x},
once per unordered pair and displacement, so detailed balance holds by
construction and r_{x,y} = c_e / n_x. On tiny tori where two displacement
vectors join the same pair, each displacement keeps its own edge and the
rates accumulate.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .envelopes import kappa_norm
from .errors import AtomError, InvariantViolation


@dataclass(frozen=True, eq=False)
class LatticeMap:
    """The linear map V in tau_g x = x + V g; |det V| is the cell volume"""
    V: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape[0] != V.shape[1]:
            raise ValueError(f"Lattice map must be square, got shape {V.shape}")
        det = float(np.linalg.det(V))
        if det == 0.0 or not math.isfinite(det):
            raise ValueError("Lattice map must be invertible (det V != 0)")
        object.__setattr__(self, 'V', V)

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def cell_volume(self) -> float:
        return abs(float(np.linalg.det(self.V)))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.V, np.eye(self.d)))

    @classmethod
    def identity(cls, d: int) -> 'LatticeMap':
        return cls(np.eye(d))

    @classmethod
    def triangular(cls) -> 'LatticeMap':
        return cls(np.array([[1.0, 0.5], [0.0, math.sqrt(3.0) / 2.0]]))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Map lattice coordinates (rows) to positions"""
        u = np.asarray(u, dtype=float)
        if self.is_identity:
            return u.copy()
        return u @ self.V.T

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_identity:
            return x.copy()
        return np.linalg.solve(self.V, x.T).T


@dataclass(frozen=True, eq=False)
class Environment:
    """
    A finite periodic environment.

    Attributes:
        d, L: dimension and torus side (cells per axis)
        lattice: the lattice map V; the torus is V [0, L)^d
        kappa: norm index for |.|
        points: atom positions, shape (N, d)
        multiplicity: n_x > 0, shape (N,)
        src, dst: edge endpoints, shape (E,)
        disp: displacement dst - src (minimal image), shape (E, d)
        conductance: c_e > 0, shape (E,)
        edge_label: generator-specific class of each edge (axis, offset index)
        sites: integer cell coordinates for lattice models, else None
    """
    d: int
    L: int
    lattice: LatticeMap
    kappa: float
    points: np.ndarray
    multiplicity: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    disp: np.ndarray
    conductance: np.ndarray
    seed: int
    model_tag: str
    edge_label: Optional[np.ndarray] = None
    sites: Optional[np.ndarray] = None
    truncation_bound: float = 0.0
    require_connected: bool = True
    metadata: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"Torus side must be at least 2, got {self.L}")
        if self.lattice.d != self.d:
            raise ValueError("Lattice map dimension does not match d")

    # Basic shape ---------------------------------------------------------------

    @property
    def n_atoms(self) -> int:
        return int(self.points.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def volume(self) -> float:
        return float(self.L) ** self.d * self.lattice.cell_volume

    @property
    def rate_forward(self) -> np.ndarray:
        """r_{src,dst} per edge"""
        return self.conductance / self.multiplicity[self.src]

    @property
    def rate_backward(self) -> np.ndarray:
        """r_{dst,src} per edge"""
        return self.conductance / self.multiplicity[self.dst]

    @property
    def total_mass(self) -> float:
        return math.fsum(self.multiplicity.tolist())

    # Geometry ----------------------------------------------------------------

    def minimal_image(self, delta: np.ndarray) -> np.ndarray:
        """Wrap displacement vectors to the minimal torus image"""
        u = self.lattice.inverse(delta)
        u = u - self.L * np.round(u / self.L)
        return self.lattice.apply(u)

    def centered_positions(self) -> np.ndarray:
        """Positions wrapped to V [-L/2, L/2)^d; atom sites near 0 stay near 0"""
        u = self.lattice.inverse(self.points)
        half = self.L / 2.0
        u = np.mod(u + half, self.L) - half
        return self.lattice.apply(u)

    def atom_index(self, x) -> int:
        """Index of atom x given either as an index or as a position"""
        if isinstance(x, (int, np.integer)):
            index = int(x)
            if 0 <= index < self.n_atoms:
                return index
            raise AtomError(f"Atom index {index} out of range [0, {self.n_atoms})")
        target = np.asarray(x, dtype=float).reshape(self.d)
        delta = self.minimal_image(self.points - target)
        hits = np.flatnonzero(np.all(np.abs(delta) <= 1e-9, axis=1))
        if hits.size == 0:
            raise AtomError(f"Point {target.tolist()} is not an atom of the environment")
        return int(hits[0])

    # Rate moments --------------------------------------------------------------

    def lambda_all(self, k: int) -> np.ndarray:
        """lambda_k(x) = sum_y r_{x,y} |y - x|^k for every atom"""
        if k not in (0, 2):
            raise ValueError(f"lambda_k is defined here for k in {{0, 2}}, got {k}")
        if k == 0:
            weight = np.ones(self.n_edges)
        else:
            weight = kappa_norm(self.disp, self.kappa) ** 2
        out = np.bincount(self.src, weights=self.rate_forward * weight, minlength=self.n_atoms)
        out += np.bincount(self.dst, weights=self.rate_backward * weight, minlength=self.n_atoms)
        return out

    def lambda_k(self, x, k: int) -> float:
        index = self.atom_index(x)
        if k not in (0, 2):
            raise ValueError(f"lambda_k is defined here for k in {{0, 2}}, got {k}")
        out_edges = self.src == index
        in_edges = self.dst == index
        weight_out = kappa_norm(self.disp[out_edges], self.kappa) ** k if k else 1.0
        weight_in = kappa_norm(self.disp[in_edges], self.kappa) ** k if k else 1.0
        total = np.sum(self.rate_forward[out_edges] * weight_out)
        total += np.sum(self.rate_backward[in_edges] * weight_in)
        return float(total)

    # Graph structure -----------------------------------------------------------

    def adjacency(self):
        data = np.ones(self.n_edges)
        return coo_matrix((data, (self.src, self.dst)), shape=(self.n_atoms, self.n_atoms)).tocsr()

    def component_count(self) -> int:
        if self.n_atoms == 0:
            return 0
        count, _ = connected_components(self.adjacency(), directed=False)
        return int(count)

    def is_connected(self) -> bool:
        return self.component_count() == 1

    def check_invariants(self, require_connected: Optional[bool] = None) -> Dict[str, bool]:
        """
        Assert the environment axioms on this sample; returns the checks made.

        Detailed balance n_x r_xy = n_y r_yx is compared to relative 4e-16
        (one or two ulp). Rates are stored as c / n, so the products are
        bit-identical only for power-of-two multiplicities.
        """
        checks = {}
        checks['no_self_loops'] = bool(np.all(self.src != self.dst))
        checks['positive_multiplicity'] = bool(np.all(self.multiplicity > 0))
        checks['positive_conductance'] = bool(np.all(self.conductance > 0))
        forward = self.multiplicity[self.src] * self.rate_forward
        backward = self.multiplicity[self.dst] * self.rate_backward
        checks['detailed_balance'] = bool(np.allclose(forward, backward, rtol=4e-16, atol=0.0))
        lam0 = self.lambda_all(0)
        lam2 = self.lambda_all(2)
        checks['finite_moments'] = bool(np.all(np.isfinite(lam0)) and np.all(np.isfinite(lam2)))
        needs_connected = self.require_connected if require_connected is None else require_connected
        if needs_connected:
            checks['connected'] = self.is_connected()
        failed = [name for name, ok in checks.items() if not ok]
        if failed:
            raise InvariantViolation(f"Environment {self.model_tag} seed={self.seed} violates {failed}")
        return checks

    # Transformations -----------------------------------------------------------

    def translate(self, g) -> 'Environment':
        """
        The environment seen from cell g (theta_g): the atom at site x + g
        moves to site x. Atoms and edges are re-ordered canonically.
        """
        if self.sites is None:
            raise ValueError("Translation is defined for lattice environments only")
        g = np.asarray(g, dtype=np.int64).reshape(self.d)
        new_sites = np.mod(self.sites - g, self.L)
        new_index = np.ravel_multi_index(tuple(new_sites.T), (self.L,) * self.d)
        order = np.argsort(new_index, kind='stable')
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        src = inverse[self.src]
        dst = inverse[self.dst]
        label = self.edge_label if self.edge_label is not None else np.zeros(self.n_edges, dtype=np.int64)
        edge_order = np.lexsort((label, src))
        sites = new_sites[order]
        return Environment(
            d=self.d, L=self.L, lattice=self.lattice, kappa=self.kappa,
            points=self.lattice.apply(sites), multiplicity=self.multiplicity[order],
            src=src[edge_order], dst=dst[edge_order], disp=self.disp[edge_order],
            conductance=self.conductance[edge_order], seed=self.seed, model_tag=self.model_tag,
            edge_label=label[edge_order], sites=sites, truncation_bound=self.truncation_bound,
            require_connected=self.require_connected, metadata=dict(self.metadata))

    def scaled(self, s: float) -> 'Environment':
        """All rates multiplied by s > 0"""
        if s <= 0:
            raise ValueError("Rate scale must be positive")
        return Environment(
            d=self.d, L=self.L, lattice=self.lattice, kappa=self.kappa, points=self.points,
            multiplicity=self.multiplicity, src=self.src, dst=self.dst, disp=self.disp,
            conductance=self.conductance * s, seed=self.seed, model_tag=self.model_tag,
            edge_label=self.edge_label, sites=self.sites, truncation_bound=self.truncation_bound * s,
            require_connected=self.require_connected, metadata=dict(self.metadata))

    def same_as(self, other: 'Environment') -> bool:
        """Bit-identical comparison of atoms and rates"""
        arrays = ('points', 'multiplicity', 'src', 'dst', 'disp', 'conductance')
        return (self.d == other.d and self.L == other.L
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))

    def describe(self) -> Dict[str, float]:
        lam0 = self.lambda_all(0)
        lam2 = self.lambda_all(2)
        weights = self.multiplicity / self.total_mass
        return {
            'n_atoms': self.n_atoms,
            'n_edges': self.n_edges,
            'total_mass': self.total_mass,
            'mean_lambda0': float(np.dot(weights, lam0)),
            'mean_lambda2': float(np.dot(weights, lam2)),
            'truncation_bound': self.truncation_bound,
        }


def lattice_environment(conductance: np.ndarray, multiplicity: Optional[np.ndarray] = None,
                        seed: int = 0, model_tag: str = 'lattice', kappa: float = 2.0,
                        lattice: Optional[LatticeMap] = None,
                        offsets: Optional[np.ndarray] = None,
                        require_connected: bool = True) -> Environment:
    """
    Build a nearest-neighbour style environment on the torus Z^d_L from arrays.

    Args:
        conductance: shape (L,)*d + (K,); entry [x, k] is the conductance of
            the edge from site x along offsets[k]. Zero entries are dropped.
        multiplicity: shape (L,)*d, defaults to ones
        offsets: integer lattice offsets, shape (K, d); defaults to the unit vectors
    """
    conductance = np.asarray(conductance, dtype=float)
    d = conductance.ndim - 1
    L = conductance.shape[0]
    if any(side != L for side in conductance.shape[:d]):
        raise ValueError("Conductance array must have equal sides")
    offsets = np.eye(d, dtype=np.int64) if offsets is None else np.asarray(offsets, dtype=np.int64)
    if offsets.shape != (conductance.shape[-1], d):
        raise ValueError("Offsets do not match the conductance array")
    lattice = lattice or LatticeMap.identity(d)
    shape = (L,) * d
    sites = np.stack(np.unravel_index(np.arange(L ** d), shape), axis=1).astype(np.int64)
    if multiplicity is None:
        multiplicity = np.ones(L ** d)
    multiplicity = np.asarray(multiplicity, dtype=float).reshape(-1)

    n_off = offsets.shape[0]
    src = np.repeat(np.arange(L ** d), n_off)
    label = np.tile(np.arange(n_off), L ** d)
    target_sites = np.mod(sites[src] + offsets[label], L)
    dst = np.ravel_multi_index(tuple(target_sites.T), shape)
    values = conductance.reshape(L ** d, n_off).reshape(-1)
    keep = values > 0
    disp = lattice.apply(offsets[label[keep]])
    return Environment(
        d=d, L=L, lattice=lattice, kappa=kappa, points=lattice.apply(sites),
        multiplicity=multiplicity, src=src[keep], dst=dst[keep], disp=disp,
        conductance=values[keep], seed=seed, model_tag=model_tag, edge_label=label[keep],
        sites=sites, require_connected=require_connected)


def log_environment(env: Environment):
    stats = env.describe()
    logging.debug(f"Environment {env.model_tag} d={env.d} L={env.L} seed={env.seed}: "
                  f"{stats['n_atoms']} atoms, {stats['n_edges']} edges, "
                  f"mean lambda0={stats['mean_lambda0']:.4g}")
