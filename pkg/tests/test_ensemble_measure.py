import math

import numpy as np
import pytest

from modules.ensemble import (EnvironmentEnsemble, Estimate, cell_masses, cell_moment_estimate,
                              ensemble_summary, intensity_estimate, palm_expectation)
from modules.envelopes import PowerEnvelope
from modules.laws import Law
from modules.measure import AtomicMeasure, counting_measure, from_environment, integrate, rescale, tail_mass
from modules.models import PoissonPP, ZdNN


def test_atomic_measure_validation():
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([[0.0], [0.0]]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([[0.0], [1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([[0.0]]), np.array([1.0]), epsilon=1.5)
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([[0.0], [1.0]]), np.array([1.0]))


def test_rescale_scales_positions_and_masses():
    mu = counting_measure(2, -2, 3)
    assert mu.n_atoms == 25
    scaled = rescale(mu, 0.25)
    assert scaled.epsilon == 0.25
    assert np.allclose(scaled.positions, mu.positions * 0.25)
    assert scaled.total_mass() == pytest.approx(25 / 16)
    with pytest.raises(ValueError):
        rescale(scaled, 0.5)
    with pytest.raises(ValueError):
        rescale(mu, 0.0)


def test_integrate_riemann_sum_converges():
    # eps^d sum_x phi(eps x) over the window approximates int phi
    phi = lambda x: np.exp(-np.pi * np.sum(x * x, axis=1))
    errors = []
    for eps in (0.5, 0.25, 0.125):
        reach = int(6 / eps)
        mu = rescale(counting_measure(2, -reach, reach + 1), eps)
        errors.append(abs(integrate(mu, phi) - 1.0))
    assert errors[-1] < 1e-6
    assert integrate(AtomicMeasure(np.zeros((0, 2)), np.zeros(0)), phi) == 0.0


def test_tail_mass_counts_far_atoms():
    mu = counting_measure(1, -3, 4)
    assert tail_mass(mu, lambda r: np.ones_like(r), 2.0) == 4.0
    assert tail_mass(mu, lambda r: np.ones_like(r), 10.0) == 0.0
    theta = PowerEnvelope(1.0, 2.0)
    assert tail_mass(mu, theta, 3.0) == pytest.approx(2 * 4.0 ** -2)
    with pytest.raises(ValueError):
        tail_mass(mu, theta, -1.0)


def test_from_environment_carries_multiplicities(weighted_env):
    mu = from_environment(weighted_env)
    assert mu.n_atoms == weighted_env.n_atoms
    assert mu.total_mass() == pytest.approx(weighted_env.total_mass)
    assert np.all(np.abs(mu.positions) <= weighted_env.L / 2.0)


def test_palm_expectation_of_one_is_exact():
    ensemble = EnvironmentEnsemble(ZdNN(Law.uniform(1.0, 2.0)), 2, 4, master_seed=5, n_seeds=3)
    estimate = palm_expectation(ensemble, 'one')
    assert estimate.value == pytest.approx(1.0)
    assert estimate.within(1.0)
    assert len(ensemble) == 3


def test_palm_expectation_size_biases_the_multiplicity():
    # E_P0[n] = E[n^2] / E[n] = 2.5 / 1.5 for n uniform on {1, 2}
    model = ZdNN(Law.constant(1.0), Law.choice((1.0, 2.0)))
    ensemble = EnvironmentEnsemble(model, 2, 16, master_seed=11, n_seeds=12)
    estimate = palm_expectation(ensemble, 'n')
    assert estimate.within(5.0 / 3.0, n_sigma=5.0)
    assert abs(estimate.value - 1.5) > 5 * estimate.stderr


def test_intensity_estimates():
    model = ZdNN(Law.constant(1.0), Law.choice((1.0, 2.0)))
    lattice = intensity_estimate(EnvironmentEnsemble(model, 2, 16, master_seed=3, n_seeds=10))
    assert lattice.within(model.intensity(2), n_sigma=5.0)
    assert not lattice.flagged

    poisson = PoissonPP(rate=2.0, measure_only=True)
    estimate = intensity_estimate(EnvironmentEnsemble(poisson, 2, 32, master_seed=4, n_seeds=10))
    assert estimate.within(2.0, n_sigma=5.0)
    with pytest.raises(ValueError):
        intensity_estimate(EnvironmentEnsemble(poisson, 2, 8, master_seed=4, n_seeds=1))


def test_cell_masses_and_moments(weighted_env):
    masses = cell_masses(weighted_env)
    assert masses.shape == (weighted_env.L ** 2,)
    assert masses.sum() == pytest.approx(weighted_env.total_mass)

    unit = EnvironmentEnsemble(ZdNN(Law.uniform(1.0, 2.0)), 2, 4, master_seed=1, n_seeds=2)
    moment = cell_moment_estimate(unit, 2.0)
    assert moment.value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cell_moment_estimate(unit, 1.0)


def test_poisson_cell_masses_sum_to_atom_count():
    env = PoissonPP(rate=1.5, measure_only=True).generate(2, 10, seed=21)
    assert cell_masses(env).sum() == pytest.approx(env.n_atoms)
    summary = ensemble_summary([env, PoissonPP(rate=1.5, measure_only=True).generate(2, 10, seed=22)])
    assert summary['n_seeds'] == 2 and summary['mean_atoms'] > 0


def test_estimate_within_with_zero_stderr():
    assert Estimate(1.0, 0.0, 1).within(1.0)
    assert not Estimate(1.0, 0.0, 1).within(1.1)
    assert Estimate(1.0, math.nan, 1).within(1.0)
