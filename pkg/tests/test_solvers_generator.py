import math

import numpy as np
import pytest
from scipy.sparse import diags
from scipy.sparse.linalg import expm_multiply

from modules.errors import ConvergenceError, EnvironmentRejected, TruncationError
from modules.generator import (build_generator, laplace_semigroup, resolvent, semigroup,
                               semigroup_at_times)
from modules.models import PoissonPP
from modules.solvers import pcg, weighted_inner


def _tridiagonal(n):
    return diags([-np.ones(n - 1), 3.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_pcg_matches_direct_solve(rng):
    A = _tridiagonal(20)
    b = rng.normal(size=20)
    result = pcg(lambda v: A @ v, b, tol=1e-12, diagonal=A.diagonal())
    assert np.allclose(A @ result.x, b, atol=1e-10)
    assert result.relative_residual <= 1e-12


def test_pcg_zero_right_hand_side():
    result = pcg(lambda v: v, np.zeros(4))
    assert result.iterations == 0 and not np.any(result.x)


def test_pcg_reports_stalls(rng):
    A = _tridiagonal(30)
    with pytest.raises(ConvergenceError) as info:
        pcg(lambda v: A @ v, rng.normal(size=30), tol=1e-14, max_iter=1)
    assert info.value.iterations == 1


def test_pcg_singular_system_with_projection():
    # ring Laplacian; the right-hand side has mean zero
    n = 12
    ring = 2.0 * np.eye(n) - np.roll(np.eye(n), 1, axis=1) - np.roll(np.eye(n), -1, axis=1)
    b = np.sin(2 * np.pi * np.arange(n) / n)
    result = pcg(lambda v: ring @ v, b, tol=1e-12, project=lambda v: v - v.mean())
    assert np.allclose(ring @ result.x, b, atol=1e-10)
    assert abs(result.x.mean()) < 1e-12


def test_weighted_inner():
    inner = weighted_inner(np.array([1.0, 2.0]))
    assert inner(np.array([1.0, 1.0]), np.array([3.0, 4.0])) == 11.0


def test_generator_structure(weighted_env):
    gen = build_generator(weighted_env, 0.5)
    dense = gen.to_dense()
    assert np.allclose(dense.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(dense - np.diag(np.diag(dense)) >= 0)
    # reversible with respect to mu^eps
    weighted = np.diag(gen.masses) @ dense
    assert np.allclose(weighted, weighted.T, rtol=1e-13, atol=1e-12)
    assert np.allclose(gen.masses, weighted_env.multiplicity * 0.25)
    f = np.cos(np.arange(gen.n_states))
    assert np.allclose(gen.apply(f), dense @ f, atol=1e-12)
    assert np.all(gen.apply(np.ones(gen.n_states)) == 0.0)


def test_generator_scales_with_epsilon(small_env):
    coarse = build_generator(small_env, 1.0)
    fine = build_generator(small_env, 0.25)
    assert fine.uniform_rate == pytest.approx(16.0 * coarse.uniform_rate)
    assert np.allclose(fine.positions, 0.25 * coarse.positions)


def test_generator_rejections(small_env):
    with pytest.raises(ValueError):
        build_generator(small_env, 0.0)
    scattered = PoissonPP(rate=1.0, measure_only=True).generate(2, 6, seed=1)
    with pytest.raises(EnvironmentRejected):
        build_generator(scattered, 1.0)


def test_resolvent_residual_and_direct_solve(weighted_env):
    gen = build_generator(weighted_env, 0.5)
    f = gen.evaluate(lambda x: np.exp(-np.sum(x * x, axis=1)))
    result = resolvent(gen, 2.0, f, tol=1e-10)
    assert result.relative_residual <= 1e-10
    direct = np.linalg.solve(2.0 * np.eye(gen.n_states) - gen.to_dense(), f)
    assert np.allclose(result.x, direct, atol=1e-8)


def test_resolvent_of_constant_is_exact(chain_env):
    gen = build_generator(chain_env, 1.0)
    result = resolvent(gen, 4.0, np.full(gen.n_states, 2.0))
    assert np.all(result.x == 0.5) and result.iterations == 0
    with pytest.raises(ValueError):
        resolvent(gen, 0.0, np.ones(gen.n_states))


def test_resolvent_reports_non_convergence(chain_env):
    gen = build_generator(chain_env, 1.0)
    f = np.arange(gen.n_states, dtype=float)
    with pytest.raises(ConvergenceError):
        resolvent(gen, 1e-3, f, tol=1e-14, max_iter=1)


def test_two_state_semigroup_closed_form(two_state_env):
    gen = build_generator(two_state_env, 1.0)
    dense = gen.to_dense()
    a, b = dense[0, 1], dense[1, 0]
    f = np.array([1.0, -2.0])
    for t in (0.1, 0.7, 3.0):
        decay = 1.0 - math.exp(-(a + b) * t)
        expected = np.array([f[0] + a / (a + b) * decay * (f[1] - f[0]),
                             f[1] + b / (a + b) * decay * (f[0] - f[1])])
        assert np.allclose(semigroup(gen, t, f), expected, atol=1e-10)


def test_semigroup_against_matrix_exponential(small_env, rng):
    gen = build_generator(small_env, 0.5)
    f = rng.normal(size=gen.n_states)
    for t in (0.0, 0.05, 0.4):
        assert np.allclose(semigroup(gen, t, f), expm_multiply(gen.matrix * t, f), atol=1e-10)


def test_semigroup_is_a_markov_contraction(weighted_env, rng):
    gen = build_generator(weighted_env, 1.0)
    f = rng.normal(size=gen.n_states)
    u = semigroup(gen, 0.8, f)
    assert np.max(np.abs(u)) <= np.max(np.abs(f)) + 1e-12
    assert gen.inner(np.ones(gen.n_states), u) == pytest.approx(gen.inner(np.ones(gen.n_states), f), abs=1e-10)
    assert np.allclose(semigroup(gen, 0.5, np.ones(gen.n_states)), 1.0, atol=1e-12)


def test_semigroup_property(chain_env, rng):
    gen = build_generator(chain_env, 1.0)
    f = rng.normal(size=gen.n_states)
    stepped = semigroup_at_times(gen, [0.3, 1.0], f)
    assert np.allclose(stepped[-1], semigroup(gen, 1.0, f), atol=1e-11)
    assert np.allclose(stepped[-1], semigroup(gen, 0.7, semigroup(gen, 0.3, f)), atol=1e-11)
    with pytest.raises(ValueError):
        semigroup_at_times(gen, [1.0, 0.5], f)
    with pytest.raises(ValueError):
        semigroup(gen, -1.0, f)


def test_semigroup_series_budget(chain_env):
    gen = build_generator(chain_env, 1.0)
    f = np.arange(gen.n_states, dtype=float)
    with pytest.raises(TruncationError):
        semigroup(gen, 1e4, f, max_terms=1)


def test_laplace_transform_of_semigroup_is_the_resolvent(chain_env):
    gen = build_generator(chain_env, 1.0)
    f = np.cos(2 * np.pi * np.arange(gen.n_states) / gen.n_states)
    lam = 1.5
    laplace = laplace_semigroup(gen, lam, f)
    direct = lam * resolvent(gen, lam, f, tol=1e-12).x
    assert np.allclose(laplace.value, direct, atol=1e-6)
    assert laplace.error_estimate <= 1e-7
