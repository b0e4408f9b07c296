import csv
import json

import numpy as np
import pytest

from modules.cache import ResultCache
from modules.errors import ConfigError
from modules.experiments import ExperimentConfig, RunContext, run
from modules.utils import file_sha256


def _config(**overrides):
    data = {'kind': 'covering-test', 'd': 2, 'seeds': {'master': 1},
            'params': {'instances': 5, 'max_points': 12, 'max_levels': 3}}
    data.update(overrides)
    return data


@pytest.mark.parametrize('overrides, key', [
    ({'kind': 'phase-diagram'}, 'kind'),
    ({'d': 4}, 'd'),
    ({'d': 1.5}, 'd'),
    ({'L': 1}, 'L'),
    ({'kappa': 0.5}, 'kappa'),
    ({'seeds': {'replicas': 0}}, 'seeds.replicas'),
    ({'seeds': {'master': -1}}, 'seeds.master'),
    ({'tolerances': {'solver': 0}}, 'tolerances.solver'),
    ({'tolerances': {'pivot': 1e-3}}, 'tolerances.pivot'),
    ({'moment_alpha': 1.0}, 'moment_alpha'),
    ({'kind': 'ergodic-avg', 'weight': {'name': 'power', 'beta': 8}}, 'n_grid'),
    ({'kind': 'ergodic-avg', 'n_grid': [0, 4], 'weight': {'name': 'power', 'beta': 8}}, 'n_grid'),
    ({'kind': 'ergodic-avg', 'n_grid': [4]}, 'weight'),
    ({'kind': 'ergodic-avg', 'd': 1, 'n_grid': [4], 'weight': {'name': 'power', 'beta': 4}}, 'weight.beta'),
    ({'kind': 'homog-convergence', 'L': 16, 'eps_grid': [0.25, 0.125]}, 'eps_grid'),
    ({'kind': 'gen-env'}, 'model'),
    ({'kind': 'gen-env', 'model': {'family': 'Voronoi'}}, 'model'),
])
def test_config_errors_name_the_key(overrides, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(_config(**overrides))
    assert info.value.key == key


def test_measure_limit_config_validation():
    base = {'kind': 'measure-limit', 'd': 2, 'model': {'family': 'ZdNN', 'law': {'kind': 'constant', 'value': 1.0}},
            'test_function': {'name': 'power_bump', 'beta': 5.0}}
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(base)
    assert info.value.key == 'eps_grid'
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({**base, 'eps_grid': [0.5, 2.0]})
    assert info.value.key == 'eps_grid'
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({**base, 'eps_grid': [0.5]})
    assert info.value.key == 'test_function'
    assert 'beta > 2d + 2' in str(info.value)
    # the moment condition relaxes the class to G(d)
    config = ExperimentConfig.from_dict({**base, 'eps_grid': [0.5], 'moment_alpha': 2.0})
    assert config.moment_alpha == 2.0


def test_config_defaults_and_overrides():
    config = ExperimentConfig.from_dict(_config())
    assert config.tolerances['corrector'] == 1e-10
    assert config.replicas == 1 and len(config.seeds) == 1
    moved = config.with_overrides(seed=42)
    assert moved.master_seed == 42 and moved.raw['seeds']['master'] == 42
    assert moved.hash != config.hash
    assert config.with_overrides() is config


def test_config_from_toml(tmp_path):
    path = tmp_path / 'covering.toml'
    path.write_text('kind = "covering-test"\nd = 1\n\n[params]\ninstances = 3\n')
    config = ExperimentConfig.from_file(path)
    assert config.kind == 'covering-test' and config.d == 1
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(tmp_path / 'missing.json')
    assert info.value.key == '<file>'


def test_covering_run_writes_reports(tmp_path):
    report = run(ExperimentConfig.from_dict(_config()), RunContext(tmp_path))
    assert report.passed
    assert len(report.rows) == 5
    assert report.csv_path.name == f"covering-test_{report.config_hash[:12]}.csv"
    summary = json.loads((tmp_path / f"covering-test_{report.config_hash[:12]}_summary.json").read_text())
    assert summary['passed'] is True


def test_runs_are_deterministic(tmp_path):
    config = ExperimentConfig.from_dict(_config())
    first = run(config, RunContext(tmp_path / 'a'))
    second = run(config, RunContext(tmp_path / 'b', threads=2))
    assert file_sha256(first.csv_path) == file_sha256(second.csv_path)


def test_gen_env_saves_environments(tmp_path):
    config = ExperimentConfig.from_dict({
        'kind': 'gen-env', 'd': 1, 'L': 8,
        'model': {'family': 'ZdNN', 'law': {'kind': 'uniform', 'a': 1.0, 'b': 2.0}},
        'seeds': {'master': 2, 'replicas': 2}})
    report = run(config, RunContext(tmp_path))
    assert [row['n_atoms'] for row in report.rows] == [8, 8]
    assert all(row['connected'] for row in report.rows)
    for row in report.rows:
        assert (tmp_path / 'environments' / row['file']).exists()
    assert report.details['intensity'] == pytest.approx(1.0)


def test_ergodic_average_run(tmp_path):
    config = ExperimentConfig.from_dict({
        'kind': 'ergodic-avg', 'd': 1, 'weight': {'name': 'power', 'beta': 8},
        'field': {'kind': 'hash', 'law': {'kind': 'bernoulli', 'p': 0.5}},
        'n_grid': [8, 16], 'seeds': {'master': 3, 'replicas': 3},
        'tolerances': {'truncation': 1e-4}})
    report = run(config, RunContext(tmp_path))
    assert len(report.rows) == 6
    assert {'c_psi_n8', 'c_psi_n16', 'median_rel_error_n16'} <= set(report.details)
    assert all(row['truncation_bound'] <= 1e-4 for row in report.rows)


def test_operator_runs_respect_their_criteria(tmp_path):
    model = {'family': 'ZdNN', 'law': {'kind': 'choice', 'values': [1.0, 2.0]}}
    semigroup_config = ExperimentConfig.from_dict({'kind': 'semigroup', 'd': 1, 'L': 32, 'model': model,
                                                   'params': {'eps': 0.25, 't': 0.5, 'f': 'gaussian:1'}})
    report = run(semigroup_config, RunContext(tmp_path))
    assert report.criteria == {'maximum_principle': True}
    with open(report.csv_path, newline='') as f:
        header = next(csv.reader(f))
    assert header == ['atom_id', 'x1', 'value']

    resolvent_config = ExperimentConfig.from_dict({'kind': 'resolvent', 'd': 2, 'L': 8, 'model': model,
                                                   'params': {'eps': 0.5, 'lambda': 2.0}})
    report = run(resolvent_config, RunContext(tmp_path))
    assert report.passed
    assert report.details['relative_residual'] <= 1e-8


def test_effective_matrix_identity_oracle(tmp_path):
    cache = ResultCache({'enable_cache': True, 'cache_file': str(tmp_path / 'cache.json')})
    config = ExperimentConfig.from_dict({
        'kind': 'effective-matrix', 'd': 2, 'L': 4,
        'model': {'family': 'ZdNN', 'law': {'kind': 'constant', 'value': 1.5}},
        'seeds': {'master': 1, 'replicas': 2},
        'params': {'cases': [{'name': 'flat', 'oracle': 'identity', 'scale': 1.5}]}})
    report = run(config, RunContext(tmp_path, cache=cache))
    assert report.criteria == {'flat_per_sample': True}
    assert np.allclose([[row['D11'], row['D22']] for row in report.rows], 1.5)
    again = run(config, RunContext(tmp_path / 'again', cache=cache))
    assert cache.get_stats()['hits'] == 2
    assert file_sha256(again.csv_path) == file_sha256(report.csv_path)

    wrong = ExperimentConfig.from_dict({**config.raw, 'params': {'cases': [
        {'name': 'flat', 'oracle': 'identity', 'scale': 2.0}]}})
    assert not run(wrong, RunContext(tmp_path)).passed


def test_accept_runs_a_directory(tmp_path):
    suite = tmp_path / 'suite'
    suite.mkdir()
    (suite / '01_covering.json').write_text(json.dumps(_config()))
    (suite / '02_nested.json').write_text(json.dumps({'kind': 'accept'}))
    (suite / 'notes.txt').write_text('ignored')
    config = ExperimentConfig.from_dict({'kind': 'accept', 'params': {'dir': str(suite)}})
    report = run(config, RunContext(tmp_path / 'out'))
    assert report.passed
    assert report.criteria == {'01_covering': True, '01_covering_determinism': True}
    assert report.rows[0]['rerun_identical'] is True

    empty = tmp_path / 'empty'
    empty.mkdir()
    with pytest.raises(ConfigError):
        run(ExperimentConfig.from_dict({'kind': 'accept', 'params': {'dir': str(empty)}}), RunContext(tmp_path))


def test_sep_hydro_rows_carry_their_profile(tmp_path):
    config = ExperimentConfig.from_dict({
        'kind': 'sep-hydro', 'd': 1, 'L': 16,
        'model': {'family': 'ZdNN', 'law': {'kind': 'constant', 'value': 1.0}},
        'seeds': {'master': 5, 'replicas': 4},
        'params': {'t_grid': [0.01], 'phis': ['one', 'sin'], 'control_p': 0.5}})
    report = run(config, RunContext(tmp_path))
    with open(report.csv_path, newline='') as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ['profile', 't', 'phi_id', 'empirical', 'reference', 'gap', 'stderr', 'seed_count']
    assert [row['profile'] for row in rows] == ['main', 'main', 'control', 'control']
    assert 'control_flat' in report.criteria

    without_control = ExperimentConfig.from_dict({**config.raw, 'params': {'t_grid': [0.01], 'phis': ['one']}})
    report = run(without_control, RunContext(tmp_path / 'plain'))
    assert {row['profile'] for row in report.rows} == {'main'}
