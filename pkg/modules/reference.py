"""
Brownian reference for the homogenization checks.

Convention: "diffusion matrix 2D" means the Brownian motion has covariance
2 D t at time t, generator div(D grad), and the heat equation
d/dt rho = div(D grad rho). Degenerate D moves only along range(D).
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import special

from .environment import Environment
from .errors import TruncationError
from .generator import build_generator, resolvent, semigroup
from .utils import parallel_map

RANK_TOLERANCE = 1e-10
WRAP_TOLERANCE = 1e-6
# eps^-1 <= L / SCALE_SEPARATION on every convergence grid
SCALE_SEPARATION = 4
# evaluation points per quadrature chunk
CHUNK = 4096


def check_scale_separation(eps_grid: Sequence[float], L: int):
    """
    Raises:
        ValueError: some eps has eps^-1 > L / 4
    """
    for eps in eps_grid:
        if 1.0 / eps > L / SCALE_SEPARATION:
            raise ValueError(f"eps = {eps:g} needs a torus side of at least {SCALE_SEPARATION / eps:g}, got L = {L}")


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """D with its eigendecomposition; m is the intensity carried by reference norms"""
    D: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if D.shape[0] != D.shape[1]:
            raise ValueError("D must be square")
        if not np.allclose(D, D.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(D))))):
            raise ValueError("D must be symmetric")
        D = 0.5 * (D + D.T)
        eigenvalues, Q = np.linalg.eigh(D)
        scale = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
        if eigenvalues.size and eigenvalues.min() < -RANK_TOLERANCE * max(scale, 1e-300):
            raise ValueError(f"D must be positive semidefinite, smallest eigenvalue {eigenvalues.min()}")
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        object.__setattr__(self, 'D', D)
        object.__setattr__(self, 'eigenvalues', eigenvalues)
        object.__setattr__(self, 'Q', Q)

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @property
    def active(self) -> np.ndarray:
        """Mask of eigen-directions spanning range(D)"""
        scale = float(self.eigenvalues.max()) if self.eigenvalues.size else 0.0
        if scale == 0.0:
            return np.zeros(self.d, dtype=bool)
        return self.eigenvalues > RANK_TOLERANCE * scale

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def kernel(self) -> np.ndarray:
        return self.Q[:, ~self.active]


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(1, d) if x.ndim == 1 else x


def _gaussian_closed_form(spec: DiffusionSpec, t: float, var: float, x: np.ndarray) -> np.ndarray:
    # exp(-x.S^{-1}x/2) convolved with N(0, 2Dt): sqrt(det S / det(S + 2Dt)) exp(-x.(S+2Dt)^{-1}x/2)
    S = var * np.eye(spec.d)
    total = S + 2.0 * t * spec.D
    ratio = math.sqrt(np.linalg.det(S) / np.linalg.det(total))
    solved = np.linalg.solve(total, x.T).T
    return ratio * np.exp(-0.5 * np.sum(x * solved, axis=1))


def _hermite_average(spec: DiffusionSpec, t: float, f: Callable, x: np.ndarray, order: int) -> np.ndarray:
    """E f(x + Q sqrt(2 Lambda t) Z) over the active directions by tensor Gauss-Hermite"""
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes = nodes * math.sqrt(2.0)
    weights = weights / math.sqrt(math.pi)
    active = np.flatnonzero(spec.active)
    directions = spec.Q[:, active] * np.sqrt(2.0 * spec.eigenvalues[active] * t)
    r = active.size
    grid = np.array(list(itertools.product(nodes, repeat=r))).reshape(-1, r)
    grid_weights = np.prod(np.array(list(itertools.product(weights, repeat=r))).reshape(-1, r), axis=1)
    shifts = grid @ directions.T
    out = np.empty(x.shape[0])
    per_chunk = max(1, CHUNK // max(1, shifts.shape[0]))
    for start in range(0, x.shape[0], per_chunk):
        block = x[start:start + per_chunk]
        points = (block[:, None, :] + shifts[None, :, :]).reshape(-1, spec.d)
        values = np.asarray(f(points), dtype=float).reshape(block.shape[0], -1)
        out[start:start + per_chunk] = values @ grid_weights
    return out


def heat_semigroup(spec: DiffusionSpec, t: float, f: Callable, x, tol: float = 1e-8,
                   order: int = 64, method: str = 'auto') -> np.ndarray:
    """
    P_t f(x) = E f(x + Y), Y ~ N(0, 2 D t), at one point or at the rows of x.

    Library Gaussians use the closed form (method 'auto'); anything else uses
    tensor Gauss-Hermite of the given order per active axis, checked against
    twice the order on a few points.

    Raises:
        TruncationError: the order-doubling check exceeds tol
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    points = _as_points(x, spec.d)
    if t == 0 or spec.rank == 0:
        return np.asarray(f(points), dtype=float).reshape(-1)
    var = getattr(f, 'gaussian_cov', None)
    if method == 'auto' and var is not None:
        return _gaussian_closed_form(spec, t, var, points)
    if method not in ('auto', 'quadrature'):
        raise ValueError(f"Unknown method '{method}'")
    values = _hermite_average(spec, t, f, points, order)
    head = points[:min(points.shape[0], 8)]
    refined = _hermite_average(spec, t, f, head, 2 * order)
    gap = float(np.max(np.abs(refined - values[:head.shape[0]])))
    if gap > tol:
        raise TruncationError(f"Gauss-Hermite order {order} misses tolerance {tol:g} (doubling gap {gap:.3g})")
    return values


def heat_resolvent(spec: DiffusionSpec, lam: float, f: Callable, x, tol: float = 1e-8,
                   orders: Sequence[int] = (32, 64, 128, 256, 512), order: int = 64) -> np.ndarray:
    """
    int_0^inf e^{-lambda t} P_t f(x) dt = (1/lambda) int_0^inf e^{-s} P_{s/lambda} f(x) ds
    by Gauss-Laguerre in s, refining the order until two successive orders agree to tol.

    Raises:
        TruncationError: no agreement at the largest order
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    points = _as_points(x, spec.d)
    if spec.rank == 0:
        return np.asarray(f(points), dtype=float).reshape(-1) / lam
    previous = None
    for q in orders:
        nodes, weights = special.roots_laguerre(q)
        keep = weights > 1e-300
        total = np.zeros(points.shape[0])
        for s, w in zip(nodes[keep], weights[keep]):
            total += w * heat_semigroup(spec, s / lam, f, points, tol, order)
        estimate = total / lam
        if previous is not None and float(np.max(np.abs(estimate - previous))) <= tol:
            return estimate
        previous = estimate
    raise TruncationError(f"Laguerre quadrature did not reach {tol:g} by order {orders[-1]}")


def heat_pde_torus(D, rho0: np.ndarray, t: float) -> np.ndarray:
    """
    Spectral solution of d/dt rho = div(D grad rho) on the unit torus,
    rho0 sampled on a uniform periodic grid of shape (M,)*d.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    rho0 = np.asarray(rho0, dtype=float)
    d = rho0.ndim
    D = np.atleast_2d(np.asarray(D, dtype=float)).reshape(d, d)
    axes = [np.fft.fftfreq(n, d=1.0 / n) for n in rho0.shape]
    k = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    quad = np.einsum('...i,ij,...j->...', k, D, k)
    multiplier = np.exp(-4.0 * math.pi ** 2 * quad * t)
    return np.real(np.fft.ifftn(np.fft.fftn(rho0) * multiplier))


# ---------------------------------------------------------------------------
# Discrepancy tables
# ---------------------------------------------------------------------------

def _midpoint_grid(half_width: float, d: int, h: float) -> Tuple[np.ndarray, float]:
    n = max(1, int(round(2.0 * half_width / h)))
    step = 2.0 * half_width / n
    axis = -half_width + step * (np.arange(n) + 0.5)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
    return grid, step


def _reference(spec: DiffusionSpec, op: str, param: float, f: Callable, x: np.ndarray, tol: float) -> np.ndarray:
    if op == 'semigroup':
        return heat_semigroup(spec, param, f, x, tol)
    return heat_resolvent(spec, param, f, x, tol)


def convergence_table(env: Environment, D_hat, f, op: str, param: float, eps_grid: Sequence[float],
                      m_hat: float = 1.0, tol: float = 1e-8, grid_step: float = 1.0 / 16,
                      weak_test=None, threads: int = 1,
                      include_timings: bool = False) -> List[Dict[str, object]]:
    """
    err2 = sum mass (u^eps - u_ref)^2 and err1 = sum mass |u^eps - u_ref| for each eps,
    u^eps from the random walk on env and u_ref from the Brownian reference with D_hat.

    ref_norm2 = m_hat * ||u_ref||^2 integrated on the smallest torus of the grid.
    weak_gap pairs both sides with the compactly supported weak_test.

    Raises:
        ValueError: eps^-1 > L / 4 for some eps
        TruncationError: f is not negligible at half the torus (wrap-around)
    """
    if op not in ('semigroup', 'resolvent'):
        raise ValueError(f"op must be 'semigroup' or 'resolvent', got '{op}'")
    if not eps_grid:
        raise ValueError("eps_grid must not be empty")
    if not env.lattice.is_identity:
        raise ValueError("convergence_table expects V = identity")
    check_scale_separation(eps_grid, env.L)
    spec = DiffusionSpec(np.asarray(D_hat, dtype=float), m_hat)
    envelope = getattr(f, 'envelope', None)
    for eps in eps_grid:
        half = eps * env.L / 2.0
        if envelope is None or float(envelope(half)) >= WRAP_TOLERANCE:
            raise TruncationError(f"Test function not negligible at half the torus (eps={eps}, radius {half:g})")

    half_min = min(eps_grid) * env.L / 2.0
    grid, step = _midpoint_grid(half_min, env.d, grid_step)
    ref_grid = _reference(spec, op, param, f, grid, tol)
    ref_norm2 = m_hat * float(np.sum(ref_grid ** 2)) * step ** env.d
    weak_integral = None
    if weak_test is not None:
        weak_integral = m_hat * float(np.sum(ref_grid * weak_test(grid))) * step ** env.d

    def one_row(eps: float) -> Dict[str, object]:
        start = time.time()
        gen = build_generator(env, eps)
        values = f(gen.positions)
        if op == 'semigroup':
            u = semigroup(gen, param, values)
            residual = 0.0
        else:
            solved = resolvent(gen, param, values, tol)
            u, residual = solved.x, solved.relative_residual
        ref = _reference(spec, op, param, f, gen.positions, tol)
        diff = u - ref
        row = {'eps': eps, 'err2': float(np.sum(gen.masses * diff * diff)),
               'err1': float(np.sum(gen.masses * np.abs(diff))), 'ref_norm2': ref_norm2}
        if weak_test is not None:
            paired = float(np.sum(gen.masses * u * weak_test(gen.positions)))
            row['weak_gap'] = abs(paired - weak_integral)
        row.update({'seed': env.seed, 'tol': tol, 'solver_residual': residual})
        if include_timings:
            row['runtime_s'] = time.time() - start
        logging.info(f"{op} eps={eps:g}: err2={row['err2']:.4g} err1={row['err1']:.4g}")
        return row

    return parallel_map(one_row, list(eps_grid), threads)
