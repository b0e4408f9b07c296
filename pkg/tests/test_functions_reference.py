import math

import numpy as np
import pytest
from scipy import integrate

from modules import functions
from modules.errors import ConfigError, TruncationError
from modules.laws import Law
from modules.models import ZdNN, generate_environment
from modules.reference import (DiffusionSpec, check_scale_separation, convergence_table, heat_pde_torus,
                               heat_resolvent, heat_semigroup)


def test_library_parsing():
    f = functions.test_function('gaussian:0.5')
    assert f.name == 'gaussian' and f.gaussian_cov == pytest.approx(0.25)
    g = functions.test_function({'name': 'power_bump', 'C': 2.0, 'beta': 9.0})
    assert g.C == 2.0 and g.beta == 9.0
    assert functions.test_function('sine_window').support == pytest.approx(0.25 * math.sqrt(3.0))
    with pytest.raises(ConfigError) as info:
        functions.test_function('bessel:1')
    assert info.value.key == 'test_function'
    with pytest.raises(ConfigError):
        functions.test_function('gaussian:-1')
    with pytest.raises(ConfigError):
        functions.test_function({'name': 'power_bump', 'gamma': 2})


def test_class_membership():
    bump = functions.power_bump(1.0, 8.0)
    assert bump.in_class(6.0) and not bump.in_class(8.0)
    assert functions.sine_window().in_class(100.0)
    assert not functions.constant().in_class(0.0)
    for f in (bump, functions.gaussian(1.0), functions.sine_window(), functions.indicator_smooth()):
        assert f.certify(2)


def test_integrals_match_quadrature():
    bump = functions.power_bump(1.0, 8.0)
    assert bump.integral(2) == pytest.approx(math.pi / 21.0)
    exact, _ = integrate.quad(lambda r: 2 * math.pi * r * (1 + r) ** -8.0, 0, np.inf)
    assert bump.integral(2) == pytest.approx(exact, rel=1e-10)

    gauss = functions.gaussian(0.7)
    exact, _ = integrate.quad(lambda x: math.exp(-x * x / (2 * 0.49)), -np.inf, np.inf)
    assert gauss.integral(1) == pytest.approx(exact, rel=1e-10)

    window = functions.sine_window(0.25)
    exact, _ = integrate.quad(lambda x: window(np.array([[x]]))[0], -0.25, 0.25)
    assert window.integral(1) == pytest.approx(exact, rel=1e-10)

    smooth = functions.indicator_smooth(0.25, 0.1)
    exact, _ = integrate.quad(lambda x: smooth(np.array([[x]]))[0], -0.4, 0.4, points=[-0.35, -0.25, 0.25, 0.35])
    assert smooth.integral(1) == pytest.approx(exact, rel=1e-8)

    with pytest.raises(ValueError):
        functions.constant().integral(1)


def test_diffusion_spec_validation_and_rank():
    with pytest.raises(ValueError):
        DiffusionSpec(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        DiffusionSpec(np.diag([1.0, -0.5]))
    spec = DiffusionSpec(np.diag([2.0, 0.0]))
    assert spec.rank == 1
    assert np.allclose(np.abs(spec.kernel[:, 0]), [0.0, 1.0])
    assert DiffusionSpec(np.zeros((2, 2))).rank == 0


@pytest.mark.parametrize('D', [np.array([[1.0, 0.2], [0.2, 0.5]]), np.diag([0.8, 0.0])])
def test_heat_semigroup_closed_form_matches_quadrature(D):
    spec = DiffusionSpec(D)
    f = functions.gaussian(0.6)
    x = np.array([[0.0, 0.0], [0.3, -0.2], [1.0, 0.5]])
    closed = heat_semigroup(spec, 0.3, f, x)
    quadrature = heat_semigroup(spec, 0.3, f, x, method='quadrature')
    assert np.allclose(closed, quadrature, atol=1e-10)


def test_heat_semigroup_edge_cases():
    spec = DiffusionSpec(np.eye(1))
    f = functions.power_bump(1.0, 8.0)
    assert heat_semigroup(spec, 0.0, f, [0.5])[0] == pytest.approx(f(np.array([[0.5]]))[0])
    assert heat_semigroup(DiffusionSpec(np.zeros((1, 1))), 2.0, f, [0.0])[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        heat_semigroup(spec, -1.0, f, [0.0])
    with pytest.raises(TruncationError):
        heat_semigroup(spec, 1e-6, functions.sine_window(0.01), np.array([[0.0095]]), tol=1e-14, order=4)


def test_heat_resolvent_against_direct_laplace_integral():
    # P_t f(0) = (1 + 2 D t)^{-1/2} for the unit Gaussian in d = 1
    D, lam = 0.5, 2.0
    spec = DiffusionSpec(np.array([[D]]))
    value = heat_resolvent(spec, lam, functions.gaussian(1.0), [0.0])[0]
    exact, _ = integrate.quad(lambda t: math.exp(-lam * t) / math.sqrt(1.0 + 2.0 * D * t), 0, np.inf)
    assert value == pytest.approx(exact, abs=1e-7)
    assert heat_resolvent(DiffusionSpec(np.zeros((1, 1))), 4.0, functions.constant(2.0), [0.0])[0] == 0.5


def test_heat_pde_torus_sine_modes_decay():
    M, t = 64, 0.05
    x = np.arange(M) / M
    rho0 = 0.5 + 0.25 * np.sin(2 * np.pi * x)
    rho = heat_pde_torus(0.3, rho0, t)
    expected = 0.5 + 0.25 * math.exp(-4 * math.pi ** 2 * 0.3 * t) * np.sin(2 * np.pi * x)
    assert np.allclose(rho, expected, atol=1e-12)

    _, Y = np.meshgrid(x, x, indexing='ij')
    rho0 = np.sin(2 * np.pi * Y)
    rho = heat_pde_torus(np.diag([1.0, 0.2]), rho0, t)
    assert np.allclose(rho, math.exp(-4 * math.pi ** 2 * 0.2 * t) * rho0, atol=1e-12)
    with pytest.raises(ValueError):
        heat_pde_torus(1.0, rho0, -0.1)


@pytest.fixture
def unit_ring():
    return generate_environment(ZdNN(Law.constant(1.0)), 1, 64, seed=1)


def test_convergence_table_rejects_wraparound(unit_ring):
    with pytest.raises(TruncationError):
        convergence_table(unit_ring, [[1.0]], functions.gaussian(1.0), 'semigroup', 0.1, [1.0 / 16])
    with pytest.raises(TruncationError):
        convergence_table(unit_ring, [[1.0]], functions.constant(), 'semigroup', 0.1, [1.0 / 8])
    with pytest.raises(ValueError):
        convergence_table(unit_ring, [[1.0]], functions.gaussian(0.5), 'heat', 0.1, [1.0 / 8])


def test_convergence_table_requires_scale_separation():
    ring = generate_environment(ZdNN(Law.constant(1.0)), 1, 32, seed=1)
    # a narrow Gaussian passes the wrap check, so only eps^-1 <= L / 4 stops it
    with pytest.raises(ValueError, match='torus side'):
        convergence_table(ring, [[1.0]], functions.gaussian(0.1), 'semigroup', 1.0, [1.0 / 16])
    check_scale_separation([1.0 / 8], 32)
    with pytest.raises(ValueError):
        check_scale_separation([1.0 / 4, 1.0 / 9], 32)


def test_convergence_table_constant_conductances(unit_ring):
    f = functions.gaussian(0.5)
    rows = convergence_table(unit_ring, [[1.0]], f, 'semigroup', 0.2, [1.0 / 4, 1.0 / 8],
                             weak_test=functions.sine_window(0.25))
    assert [row['eps'] for row in rows] == [0.25, 0.125]
    assert rows[1]['err2'] < rows[0]['err2']
    assert rows[0]['ref_norm2'] > 0
    assert all('weak_gap' in row and 'runtime_s' not in row for row in rows)

    resolvent_rows = convergence_table(unit_ring, [[1.0]], f, 'resolvent', 1.0, [1.0 / 4, 1.0 / 8],
                                       include_timings=True)
    assert resolvent_rows[1]['err2'] < resolvent_rows[0]['err2']
    assert all(row['solver_residual'] <= 1e-8 and row['runtime_s'] >= 0 for row in resolvent_rows)
