"""
Preconditioned conjugate gradient in a caller-supplied inner product.

The generator is self-adjoint in the mu^eps-weighted inner product rather
than the Euclidean one, so the solver takes the inner product as an
argument and measures the residual in the same geometry.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError

Operator = Callable[[np.ndarray], np.ndarray]
InnerProduct = Callable[[np.ndarray, np.ndarray], float]


def euclidean(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v))


def weighted_inner(weights: np.ndarray) -> InnerProduct:
    """<u, v>_w = sum_x w_x u_x v_x"""
    def inner(u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(weights * u, v))
    return inner


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    relative_residual: float


def pcg(apply_A: Operator, b: np.ndarray, tol: float = 1e-8, inner: InnerProduct = euclidean,
        diagonal: Optional[np.ndarray] = None, project: Optional[Operator] = None,
        x0: Optional[np.ndarray] = None, max_iter: Optional[int] = None) -> SolveResult:
    """
    Solve A x = b for A self-adjoint positive (semi)definite in `inner`.

    Stops when ||r|| <= tol * ||b|| in the norm of `inner`. `diagonal` enables
    Jacobi preconditioning; `project` removes a null space from every residual
    and search direction (singular consistent systems).

    Raises:
        ConvergenceError: residual target not reached within max_iter
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = max_iter or max(1000, 20 * n)
    b_norm = math.sqrt(max(inner(b, b), 0.0))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if b_norm == 0.0:
        return SolveResult(np.zeros(n), 0, 0.0, 0.0)

    r = b - apply_A(x) if x0 is not None else b.copy()
    if project is not None:
        r = project(r)
    inv_diag = None
    if diagonal is not None:
        safe = np.where(diagonal > 0, diagonal, 1.0)
        inv_diag = 1.0 / safe

    def precondition(v: np.ndarray) -> np.ndarray:
        z = v * inv_diag if inv_diag is not None else v.copy()
        return project(z) if project is not None else z

    z = precondition(r)
    p = z.copy()
    rz = inner(r, z)
    residual = math.sqrt(max(inner(r, r), 0.0))
    iterations = 0
    while residual > tol * b_norm:
        if iterations >= max_iter:
            logging.error(f"CG stalled at relative residual {residual / b_norm:.3e} after {iterations} iterations")
            raise ConvergenceError("Conjugate gradient did not converge", residual / b_norm, iterations)
        Ap = apply_A(p)
        pAp = inner(p, Ap)
        if pAp <= 0:
            raise ConvergenceError("Operator is not positive definite on the search space",
                                   residual / b_norm, iterations)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        z = precondition(r)
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        residual = math.sqrt(max(inner(r, r), 0.0))
        iterations += 1

    return SolveResult(x, iterations, residual, residual / b_norm)
