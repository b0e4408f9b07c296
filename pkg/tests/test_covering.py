import numpy as np
import pytest

from modules.covering import NestedSets, covering_select, covering_test, random_instance, verify_covering
from modules.errors import InvariantViolation


def test_nested_sets_must_increase():
    with pytest.raises(ValueError):
        NestedSets(1, [[(0,), (1,)], [(0,)]])
    with pytest.raises(ValueError):
        NestedSets(2, [[(0,)]])
    with pytest.raises(ValueError):
        NestedSets(1, [])


def test_difference_set_of_an_interval():
    sets = NestedSets(1, [[(0,), (1,), (2,)]])
    assert sets.difference_set(1) == frozenset((k,) for k in range(-2, 3))
    with pytest.raises(ValueError):
        sets.level(2)


def test_shells_are_nested_balls():
    sets = NestedSets.shells(2, 3, 0)
    assert sets.N == 3
    assert sets.level(1) == frozenset({(0, 0)})
    assert len(sets.level(2)) == 9
    assert sets.level(2) <= sets.level(3)


def test_select_prefers_high_levels():
    sets = NestedSets(1, [[(0,)], [(-1,), (0,), (1,)]])
    B = [(0,), (1,), (5,)]
    levels = {(0,): 1, (1,): 2, (5,): 1}
    result = covering_select(B, levels, sets, verify=True)
    # (1,) is taken first at level 2 and blocks (0,)
    assert result.selected == [((1,), 2), ((5,), 1)]
    assert result.certificate == {'disjoint': True, 'covered': True, 'cardinality': True}
    assert result.points == [(1,), (5,)]


def test_select_rejects_bad_levels():
    sets = NestedSets(1, [[(0,)]])
    with pytest.raises(ValueError):
        covering_select([(0,)], {(0,): 2}, sets)


def test_verify_detects_an_uncovered_point():
    sets = NestedSets(1, [[(0,)]])
    with pytest.raises(InvariantViolation):
        verify_covering([(0,), (3,)], {(0,): 1, (3,): 1}, sets, [((0,), 1)])


def test_random_instances_satisfy_the_lemma():
    rng = np.random.default_rng(77)
    for _ in range(25):
        instance = random_instance(rng, d=2, max_points=30)
        result = covering_select(instance.B, instance.levels, instance.sets, verify=True)
        assert all(result.certificate.values())
        assert 1 <= len(result.selected) <= len(instance.B)


def test_covering_test_rows():
    rows = covering_test(20, seed=5, d=1, max_points=15)
    assert len(rows) == 20
    assert all(row['disjoint'] and row['covered'] and row['cardinality'] for row in rows)
    assert rows == covering_test(20, seed=5, d=1, max_points=15)


@pytest.mark.slow
def test_thousand_random_instances_satisfy_the_lemma():
    rows = covering_test(1000, seed=2024, d=2, max_points=50, max_levels=4)
    assert len(rows) == 1000
    assert all(row['disjoint'] and row['covered'] and row['cardinality'] for row in rows)
    assert max(row['n_points'] for row in rows) <= 50
    assert max(row['levels'] for row in rows) <= 4
