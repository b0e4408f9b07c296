import math

import numpy as np
import pytest

from modules.environment import lattice_environment
from modules.errors import AtomError
from modules.generator import build_generator, semigroup
from modules.laws import Law
from modules.models import ZdNN, generate_environment
from modules.paths import JumpTable, msd_estimate, occupancy_estimate, simulate_ensemble, simulate_path


def test_jump_table_rates_match_the_generator(weighted_env):
    table = JumpTable(weighted_env, 0.5)
    gen = build_generator(weighted_env, 0.5)
    assert np.allclose(table.hold_rate, -gen.diagonal)
    assert table.start[-1] == 2 * weighted_env.n_edges
    with pytest.raises(ValueError):
        JumpTable(weighted_env, 2.0)


def test_choose_stays_on_outgoing_arcs(small_env, rng):
    table = JumpTable(small_env)
    atoms = rng.integers(0, small_env.n_atoms, size=500)
    arcs = table.choose(atoms, rng.random(500))
    assert np.all(arcs >= table.start[atoms])
    assert np.all(arcs < table.start[atoms + 1])


def test_simulate_path_is_a_valid_trajectory(small_env, rng):
    path = simulate_path(small_env, 1.0, 0, 5.0, rng)
    assert path.start == 0
    assert path.times[0] == 0.0
    assert np.all(np.diff(path.times) > 0)
    assert path.times[-1] <= 5.0
    assert path.atom_at(0.0) == 0
    assert path.atom_at(5.0) == path.atoms[-1]
    steps = np.abs(np.diff(path.displacements, axis=0)).sum(axis=1)
    assert np.allclose(steps, 1.0)
    with pytest.raises(ValueError):
        path.atom_at(6.0)
    with pytest.raises(AtomError):
        simulate_path(small_env, 1.0, (0.5, 0.5), 1.0, rng)


def test_path_start_by_position(small_env, rng):
    index = small_env.atom_index((2.0, 3.0))
    path = simulate_path(small_env, 1.0, (2.0, 3.0), 0.5, rng)
    assert path.start == index


def test_ensemble_records_are_ordered(chain_env, rng):
    table = JumpTable(chain_env)
    result = simulate_ensemble(table, np.zeros(50, dtype=np.int64), 2.0, rng, [0.0, 0.5, 2.0])
    assert result.atoms.shape == (50, 3)
    assert np.all(result.atoms[:, 0] == 0)
    assert np.all(result.displacements[:, 0] == 0.0)
    with pytest.raises(ValueError):
        simulate_ensemble(table, np.zeros(2, dtype=np.int64), 1.0, rng, [0.5, 2.0])


def test_two_state_occupancy_matches_closed_form(two_state_env):
    gen = build_generator(two_state_env, 1.0)
    dense = gen.to_dense()
    a, b = dense[0, 1], dense[1, 0]
    T = 0.3
    expected = a / (a + b) * (1.0 - math.exp(-(a + b) * T))
    estimate = occupancy_estimate(JumpTable(two_state_env), 0, T, [1], 20_000, np.random.default_rng(8))
    assert estimate.within(expected, n_sigma=4.0)


def test_occupancy_matches_uniformization(chain_env):
    gen = build_generator(chain_env, 1.0)
    T = 0.8
    indicator = np.zeros(gen.n_states)
    indicator[[0, 1, 15]] = 1.0
    # P_0(X_T in A) = (P_T 1_A)(0)
    expected = semigroup(gen, T, indicator)[0]
    estimate = occupancy_estimate(JumpTable(chain_env), 0, T, [0, 1, 15], 20_000, np.random.default_rng(9))
    assert estimate.within(expected, n_sigma=4.0)


def test_msd_of_constant_conductance_walk(rng):
    # unit conductances on Z^2: E|X_t|^2 = 4 t, so MSD / t = 2 tr(D) = 4
    env = generate_environment(ZdNN(Law.constant(1.0)), 2, 64, seed=1)
    estimate = msd_estimate(env, 1.0, 5.0, 4000, rng)
    assert estimate.within(4.0, n_sigma=4.0)
    with pytest.raises(ValueError):
        msd_estimate(env, 1.0, 0.0, 10, rng)


def test_choose_resolves_tiny_hold_rates():
    # atom 5 is joined to its neighbours by 3e-6 (to 6) and 1e-6 (to 4) among 1e12 bonds
    conductance = np.full((8, 1), 1e12)
    conductance[4, 0] = 1e-6
    conductance[5, 0] = 3e-6
    env = lattice_environment(conductance)
    table = JumpTable(env)
    assert table.hold_rate[5] == pytest.approx(4e-6)
    u = (np.arange(1000) + 0.5) / 1000
    targets = table.target[table.choose(np.full(1000, 5), u)]
    assert set(targets.tolist()) == {4, 6}
    assert abs(int(np.sum(targets == 6)) - 750) <= 1
