import json

import numpy as np
import pytest

from modules.utils import (STREAM_FIELD, config_hash, counter_hash, counter_uniform, file_sha256,
                           jackknife_ratio, load_config, mean_stderr, parallel_map, read_structured,
                           replica_seed, replica_seeds, splitmix64)


def test_splitmix64_known_value():
    # first output of SplitMix64 seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_counter_hash_is_pure_and_shape_preserving():
    keys = np.array([[0, 0], [1, -1], [5, 7]])
    first = counter_hash(3, STREAM_FIELD, keys)
    again = counter_hash(3, STREAM_FIELD, keys.copy())
    assert first.shape == (3,)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, counter_hash(4, STREAM_FIELD, keys))


def test_counter_uniform_in_open_interval():
    u = counter_uniform(1, STREAM_FIELD, np.arange(10000).reshape(-1, 1))
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.02


def test_replica_seeds_stable_under_count_change():
    assert replica_seeds(42, 3) == replica_seeds(42, 10)[:3]
    assert replica_seed(42, 0) != replica_seed(42, 1)
    assert all(s >= 0 for s in replica_seeds(7, 20))


def test_config_hash_ignores_key_order():
    assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})
    assert config_hash({'a': 1}) != config_hash({'a': 2})


def test_parallel_map_preserves_order():
    items = list(range(50))
    assert parallel_map(lambda x: x * x, items, threads=4) == [x * x for x in items]


def test_parallel_map_reraises():
    def boom(x):
        raise RuntimeError("task failed")

    with pytest.raises(RuntimeError):
        parallel_map(boom, [1, 2, 3], threads=2)


def test_mean_stderr():
    mean, err = mean_stderr([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert err == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert mean_stderr([2.0, 2.0]) == (2.0, 0.0)
    assert np.isnan(mean_stderr([1.0])[1])


def test_jackknife_ratio_exact_for_proportional_data():
    ratio, err = jackknife_ratio([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
    assert ratio == 2.0
    assert err == 0.0


def test_read_structured_json_and_toml(tmp_path):
    (tmp_path / 'a.json').write_text(json.dumps({'kind': 'gen-env', 'd': 2}))
    (tmp_path / 'b.toml').write_text('kind = "gen-env"\nd = 2\n[seeds]\nmaster = 3\n')
    assert read_structured(tmp_path / 'a.json') == {'kind': 'gen-env', 'd': 2}
    assert read_structured(tmp_path / 'b.toml') == {'kind': 'gen-env', 'd': 2, 'seeds': {'master': 3}}


def test_load_config_merges_over_defaults(tmp_path):
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps({'threads': 3}))
    settings = load_config(path)
    assert settings['threads'] == 3
    assert settings['log_file'] == 'ergolab.log'


def test_file_sha256(tmp_path):
    a = tmp_path / 'a.txt'
    b = tmp_path / 'b.txt'
    a.write_bytes(b'same')
    b.write_bytes(b'same')
    assert file_sha256(a) == file_sha256(b)
