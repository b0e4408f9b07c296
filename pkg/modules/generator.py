"""
The rescaled random-walk generator

    (L^eps f)(eps x) = eps^{-2} sum_y r_{x,y} (f(eps y) - f(eps x))

on a finite environment, with its semigroup (by uniformization) and
resolvent (by conjugate gradient in the mu^eps inner product).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import special, stats
from scipy.sparse import coo_matrix, csr_matrix

from .environment import Environment
from .errors import ConvergenceError, EnvironmentRejected, TruncationError
from .solvers import SolveResult, pcg, weighted_inner

# longest Poisson series evaluated in one uniformization step
MAX_UNIFORMIZATION_TERMS = 200_000
MAX_SPLIT_LEVELS = 20


@dataclass(frozen=True, eq=False)
class SparseGenerator:
    """
    L^eps on the atoms of an environment.

    Attributes:
        positions: eps * (centred atom positions), shape (N, d)
        masses: eps^d n_x, the mu^eps weights
        src, dst, rate_forward, rate_backward: edges with eps^{-2}-scaled rates
        disp: eps-scaled displacement of every edge
        matrix: CSR form with diagonal equal to minus the off-diagonal row sums
    """
    epsilon: float
    positions: np.ndarray
    masses: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rate_forward: np.ndarray
    rate_backward: np.ndarray
    disp: np.ndarray
    matrix: csr_matrix
    diagonal: np.ndarray
    source_tag: str = ''

    @property
    def n_states(self) -> int:
        return self.masses.size

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def uniform_rate(self) -> float:
        """Lambda = max |L_xx|"""
        return float(np.max(-self.diagonal)) if self.diagonal.size else 0.0

    def apply(self, f: np.ndarray) -> np.ndarray:
        """L^eps f in edge-difference form; exactly zero on constants"""
        f = np.asarray(f, dtype=float)
        diff = f[self.dst] - f[self.src]
        out = np.bincount(self.src, weights=self.rate_forward * diff, minlength=self.n_states)
        out -= np.bincount(self.dst, weights=self.rate_backward * diff, minlength=self.n_states)
        return out

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.masses * u, v))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def evaluate(self, f) -> np.ndarray:
        """Sample a function of position at the rescaled atoms"""
        return np.asarray(f(self.positions), dtype=float).reshape(-1)


def build_generator(env: Environment, epsilon: float) -> SparseGenerator:
    """
    Assemble L^eps for a connected environment.

    Raises:
        EnvironmentRejected: disconnected environment
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if env.n_atoms == 0 or not env.is_connected():
        raise EnvironmentRejected(
            f"Generator needs a connected environment; {env.model_tag} seed={env.seed} "
            f"has {env.component_count()} components")
    scale = 1.0 / (epsilon * epsilon)
    forward = env.rate_forward * scale
    backward = env.rate_backward * scale
    n = env.n_atoms
    rows = np.concatenate([env.src, env.dst])
    cols = np.concatenate([env.dst, env.src])
    data = np.concatenate([forward, backward])
    off = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    out_rate = np.bincount(env.src, weights=forward, minlength=n) + np.bincount(env.dst, weights=backward, minlength=n)
    matrix = (off - coo_matrix((out_rate, (np.arange(n), np.arange(n))), shape=(n, n))).tocsr()
    return SparseGenerator(
        epsilon=epsilon, positions=env.centered_positions() * epsilon,
        masses=env.multiplicity * epsilon ** env.d, src=env.src, dst=env.dst,
        rate_forward=forward, rate_backward=backward, disp=env.disp * epsilon,
        matrix=matrix, diagonal=-out_rate, source_tag=f"{env.model_tag}:{env.seed}")


# ---------------------------------------------------------------------------
# Resolvent
# ---------------------------------------------------------------------------

def resolvent(gen: SparseGenerator, lam: float, f: np.ndarray, tol: float = 1e-8,
              max_iter: Optional[int] = None) -> SolveResult:
    """
    u = (lambda - L^eps)^{-1} f with ||f - (lambda - L) u||_mu <= tol ||f||_mu.

    Raises:
        ConvergenceError: CG did not reach the residual target
    """
    if lam <= 0:
        raise ValueError("The resolvent needs lambda > 0")
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = np.asarray(f, dtype=float)
    if f.size and np.all(f == f[0]):
        return SolveResult(f / lam, 0, 0.0, 0.0)

    def apply_A(u: np.ndarray) -> np.ndarray:
        return lam * u - gen.apply(u)

    inner = weighted_inner(gen.masses)
    f_norm = gen.norm(f)
    result = pcg(apply_A, f, tol, inner, diagonal=lam - gen.diagonal, max_iter=max_iter)
    iterations = result.iterations
    u = result.x
    # the recursive residual drifts; refine against the true one
    for _ in range(3):
        true_residual = gen.norm(f - apply_A(u)) / f_norm if f_norm else 0.0
        if true_residual <= tol:
            return SolveResult(u, iterations, true_residual * f_norm, true_residual)
        refined = pcg(apply_A, f, tol, inner, diagonal=lam - gen.diagonal, x0=u, max_iter=max_iter)
        u = refined.x
        iterations += refined.iterations
    true_residual = gen.norm(f - apply_A(u)) / f_norm
    if true_residual > tol:
        raise ConvergenceError("Resolvent residual above tolerance after refinement",
                               true_residual, iterations)
    return SolveResult(u, iterations, true_residual * f_norm, true_residual)


# ---------------------------------------------------------------------------
# Semigroup by uniformization
# ---------------------------------------------------------------------------

def _series_length(mu: float, tol: float) -> int:
    """Smallest K with P(Poisson(mu) > K) <= tol"""
    if mu == 0:
        return 0
    K = stats.poisson.isf(tol, mu)
    if not math.isfinite(K):
        return MAX_UNIFORMIZATION_TERMS + 1
    K = int(K)
    while stats.poisson.sf(K, mu) > tol:
        K += 1
    return K


def _uniformized(gen: SparseGenerator, t: float, f: np.ndarray, tol: float) -> np.ndarray:
    lam = gen.uniform_rate
    mu = lam * t
    K = _series_length(mu, tol)
    weights = stats.poisson.pmf(np.arange(K + 1), mu)
    weights /= math.fsum(weights.tolist())
    v = f.copy()
    out = weights[0] * v
    for k in range(1, K + 1):
        v = v + gen.apply(v) / lam
        out += weights[k] * v
    return out


def semigroup(gen: SparseGenerator, t: float, f: np.ndarray, tol: float = 1e-12,
              max_terms: int = MAX_UNIFORMIZATION_TERMS) -> np.ndarray:
    """
    P_t f = e^{-Lambda t} sum_k (Lambda t)^k / k! Q^k f with Q = I + L / Lambda,
    truncated where the Poisson tail is below tol. Long series are split into
    halves (up to 20 levels).

    Raises:
        TruncationError: the series is too long even after splitting
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    f = np.asarray(f, dtype=float)
    lam = gen.uniform_rate
    if t == 0 or lam == 0:
        return f.copy()
    levels = 0
    while _series_length(lam * t / 2 ** levels, tol / 2 ** levels) > max_terms:
        levels += 1
        if levels > MAX_SPLIT_LEVELS:
            raise TruncationError(
                f"Uniformization needs more than {max_terms} terms for Lambda t = {lam * t:.3g} "
                f"even after {MAX_SPLIT_LEVELS} halvings; split the time interval")
    if levels:
        logging.debug(f"Uniformization split into {2 ** levels} steps")
    step = t / 2 ** levels
    u = f
    for _ in range(2 ** levels):
        u = _uniformized(gen, step, u, tol / 2 ** levels)
    return u


def semigroup_at_times(gen: SparseGenerator, times: Sequence[float], f: np.ndarray,
                       tol: float = 1e-12) -> List[np.ndarray]:
    """P_t f at increasing times, stepping from one time to the next"""
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be non-negative and increasing")
    out = []
    u = np.asarray(f, dtype=float)
    previous = 0.0
    for t in times:
        u = semigroup(gen, t - previous, u, tol)
        out.append(u)
        previous = t
    return out


@dataclass(frozen=True)
class LaplaceResult:
    value: np.ndarray
    order: int
    error_estimate: float


def laplace_semigroup(gen: SparseGenerator, lam: float, f: np.ndarray, tol: float = 1e-7,
                      orders: Sequence[int] = (32, 64, 128, 256, 512),
                      semigroup_tol: float = 1e-14) -> LaplaceResult:
    """
    lambda int_0^inf e^{-lambda t} P_t f dt = int_0^inf e^{-s} P_{s/lambda} f ds by
    Gauss-Laguerre quadrature over uniformized semigroup values, with a
    nested-order error estimate.

    Raises:
        TruncationError: the nested estimate stays above tol at the largest order
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    f = np.asarray(f, dtype=float)
    f_sup = float(np.max(np.abs(f))) if f.size else 0.0
    previous = None
    for order in orders:
        nodes, weights = special.roots_laguerre(order)
        # P_s is a contraction in sup norm, so tiny weights cannot matter
        keep = weights * max(f_sup, 1e-300) > 1e-18
        values = semigroup_at_times(gen, nodes[keep] / lam, f, semigroup_tol)
        estimate = np.zeros_like(f)
        for w, v in zip(weights[keep], values):
            estimate += w * v
        if previous is not None:
            error = float(np.max(np.abs(estimate - previous)))
            if error <= tol:
                return LaplaceResult(estimate, order, error)
        previous = estimate
    raise TruncationError(f"Laplace quadrature did not reach {tol:g} at order {orders[-1]}")
