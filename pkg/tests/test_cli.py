import json

import pytest

import ergolab


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    settings = {'out_dir': str(tmp_path / 'results'), 'threads': 1, 'log_file': str(tmp_path / 'ergolab.log'),
                'enable_cache': True, 'cache_file': str(tmp_path / 'cache' / 'cache.json')}
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps(settings))
    return tmp_path, path


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def _effective(scale):
    return {'kind': 'effective-matrix', 'd': 2, 'L': 4,
            'model': {'family': 'ZdNN', 'law': {'kind': 'constant', 'value': 1.5}},
            'params': {'cases': [{'name': 'flat', 'oracle': 'identity', 'scale': scale}]}}


def test_passing_run_exits_zero(workspace, capsys):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'covering.json', {'kind': 'covering-test', 'params': {'instances': 4}})
    assert ergolab.main(['covering-test', '-c', config, '--settings', str(settings)]) == ergolab.EXIT_OK
    assert 'all_instances: PASS' in capsys.readouterr().out
    assert list((tmp_path / 'results').glob('covering-test_*.csv'))


def test_failed_criterion_exits_one(workspace):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'wrong.json', _effective(2.0))
    assert ergolab.main(['effective-matrix', '-c', config, '--settings', str(settings)]) == ergolab.EXIT_FAILED


def test_cache_is_written_unless_disabled(workspace):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'flat.json', _effective(1.5))
    assert ergolab.main(['effective-matrix', '-c', config, '--settings', str(settings), '--nocache']) == 0
    assert not (tmp_path / 'cache' / 'cache.json').exists()
    assert ergolab.main(['effective-matrix', '-c', config, '--settings', str(settings)]) == 0
    assert (tmp_path / 'cache' / 'cache.json').exists()


@pytest.mark.parametrize('data', [
    {'kind': 'covering-test', 'd': 7},
    {'kind': 'ergodic-avg', 'n_grid': [4], 'weight': {'name': 'box'}},
])
def test_configuration_errors_exit_two(workspace, data):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'bad.json', data)
    assert ergolab.main([data['kind'], '-c', config, '--settings', str(settings)]) == ergolab.EXIT_ERROR


def test_config_kind_must_match_the_verb(workspace, capsys):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'covering.json', {'kind': 'covering-test'})
    assert ergolab.main(['maximal', '-c', config, '--settings', str(settings)]) == ergolab.EXIT_ERROR
    assert "not 'maximal'" in capsys.readouterr().out


def test_flags_merge_into_params(workspace):
    tmp_path, settings = workspace
    args = ergolab.build_parser().parse_args(['semigroup', '--eps', '0.5', '--t', '2', '--f', 'gaussian:2'])
    data = ergolab.experiment_dict(args)
    assert data['kind'] == 'semigroup'
    assert data['params'] == {'eps': 0.5, 't': 2.0, 'f': 'gaussian:2'}
    with pytest.raises(SystemExit):
        ergolab.build_parser().parse_args(['phase-diagram'])


def test_seed_override(workspace):
    tmp_path, settings = workspace
    config = _write(tmp_path / 'covering.json', {'kind': 'covering-test', 'params': {'instances': 3}})
    for seed in (1, 2):
        assert ergolab.main(['covering-test', '-c', config, '--settings', str(settings), '--seed', str(seed)]) == 0
    assert len(list((tmp_path / 'results').glob('covering-test_*.csv'))) == 2
