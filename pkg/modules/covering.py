"""
Greedy Vitali-type covering on Z^d.

Given a finite set B, a level map k: B -> {1..N} and nested finite sets
I_1 ⊆ ... ⊆ I_N, select B' ⊆ B level by level from N down to 1, scanning
candidates in lexicographic order and accepting z when z + I_{k(z)} misses
every translate accepted so far. The selection satisfies

    translates z + I_{k(z)}, z in B', are pairwise disjoint
    B ⊆ union over z in B' of (z + I_{k(z)} - I_{k(z)})
    |B| <= sum over z in B' of |I_{k(z)} - I_{k(z)}|
"""

import functools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Sequence, Tuple

import numpy as np

from .envelopes import kappa_norm
from .errors import InvariantViolation

Point = Tuple[int, ...]


class NestedSets:
    """Finite nested sets I_1 ⊆ ... ⊆ I_N of Z^d"""

    def __init__(self, d: int, levels: Sequence[Sequence[Point]]):
        self.d = d
        self.levels: List[FrozenSet[Point]] = [frozenset(tuple(int(c) for c in p) for p in level)
                                               for level in levels]
        if not self.levels:
            raise ValueError("NestedSets needs at least one level")
        for r, (inner, outer) in enumerate(zip(self.levels, self.levels[1:]), start=1):
            if not inner <= outer:
                raise ValueError(f"Level {r} is not contained in level {r + 1}")
        if any(len(p) != d for level in self.levels for p in level):
            raise ValueError("Points do not match the dimension")
        self._differences: Dict[int, FrozenSet[Point]] = {}

    @property
    def N(self) -> int:
        return len(self.levels)

    def level(self, r: int) -> FrozenSet[Point]:
        if not 1 <= r <= self.N:
            raise ValueError(f"Level {r} outside 1..{self.N}")
        return self.levels[r - 1]

    def difference_set(self, r: int) -> FrozenSet[Point]:
        """I_r - I_r"""
        if r not in self._differences:
            members = np.array(sorted(self.level(r)), dtype=np.int64).reshape(-1, self.d)
            diffs = (members[:, None, :] - members[None, :, :]).reshape(-1, self.d)
            self._differences[r] = frozenset(map(tuple, np.unique(diffs, axis=0).tolist()))
        return self._differences[r]

    @classmethod
    def shells(cls, d: int, N: int, m: int, kappa: float = 2.0) -> 'NestedSets':
        """I_r = {x in Z^d : |x| < (m + 1) r}, r = 1..N"""
        reach = (m + 1) * N
        axis = np.arange(-reach, reach + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
        norms = kappa_norm(grid, kappa)
        levels = [grid[norms < (m + 1) * r].tolist() for r in range(1, N + 1)]
        return cls(d, levels)

    @classmethod
    def from_points(cls, d: int, levels: Sequence[Sequence[Sequence[int]]]) -> 'NestedSets':
        return cls(d, levels)


@dataclass
class CoveringResult:
    selected: List[Tuple[Point, int]]
    certificate: Dict[str, bool] = field(default_factory=dict)

    @property
    def points(self) -> List[Point]:
        return [z for z, _ in self.selected]


def _translate(z: Point, members: FrozenSet[Point]) -> List[Point]:
    return [tuple(a + b for a, b in zip(z, x)) for x in members]


def covering_select(B: Sequence[Sequence[int]], k: Mapping[Point, int], sets: NestedSets,
                    verify: bool = False) -> CoveringResult:
    """
    Greedy maximal collection, levels N down to 1, lexicographic scan.

    Args:
        B: finite list of points of Z^d
        k: level of every point of B
        sets: the nested family
        verify: assert disjointness, covering and the cardinality bound
    """
    points = sorted({tuple(int(c) for c in z) for z in B})
    levels = {z: int(k[z]) for z in points}
    if any(not 1 <= r <= sets.N for r in levels.values()):
        raise ValueError(f"Levels must lie in 1..{sets.N}")

    occupied = set()
    selected: List[Tuple[Point, int]] = []
    for r in range(sets.N, 0, -1):
        members = sets.level(r)
        for z in points:
            if levels[z] != r:
                continue
            translate = _translate(z, members)
            if occupied.isdisjoint(translate):
                occupied.update(translate)
                selected.append((z, r))

    result = CoveringResult(selected)
    if verify:
        result.certificate = verify_covering(points, levels, sets, selected)
    return result


def verify_covering(B: Sequence[Point], levels: Mapping[Point, int], sets: NestedSets,
                    selected: Sequence[Tuple[Point, int]]) -> Dict[str, bool]:
    """Check the three covering conclusions; raises InvariantViolation on failure"""
    seen = set()
    total = 0
    for z, r in selected:
        translate = _translate(z, sets.level(r))
        seen.update(translate)
        total += len(translate)
    disjoint = total == len(seen)

    covered = True
    for b in B:
        if not any(tuple(bi - zi for bi, zi in zip(b, z)) in sets.difference_set(r) for z, r in selected):
            covered = False
            break

    cardinality = len(set(B)) <= sum(len(sets.difference_set(r)) for _, r in selected)
    certificate = {'disjoint': disjoint, 'covered': covered, 'cardinality': cardinality}
    failed = [name for name, ok in certificate.items() if not ok]
    if failed:
        raise InvariantViolation(f"Covering certificate failed: {failed}")
    return certificate


@functools.lru_cache(maxsize=64)
def _cached_shells(d: int, N: int, m: int) -> NestedSets:
    return NestedSets.shells(d, N, m)


@dataclass(frozen=True)
class CoveringInstance:
    B: Tuple[Point, ...]
    levels: Dict[Point, int]
    sets: NestedSets
    shell: int


def random_instance(rng: np.random.Generator, d: int = 2, max_points: int = 50,
                    max_levels: int = 4, spread: int = 12, max_shell: int = 2) -> CoveringInstance:
    """A random covering problem with shell-type nested sets"""
    N = int(rng.integers(1, max_levels + 1))
    m = int(rng.integers(0, max_shell + 1))
    size = int(rng.integers(1, max_points + 1))
    raw = rng.integers(-spread, spread + 1, size=(size, d))
    B = tuple(sorted(set(map(tuple, raw.tolist()))))
    levels = {z: int(rng.integers(1, N + 1)) for z in B}
    return CoveringInstance(B, levels, _cached_shells(d, N, m), m)


def covering_test(instances: int, seed: int, d: int = 2, max_points: int = 50,
                  max_levels: int = 4) -> List[Dict[str, object]]:
    """Run covering_select with verification on random instances"""
    rng = np.random.default_rng(seed)
    rows = []
    for index in range(instances):
        instance = random_instance(rng, d, max_points, max_levels)
        try:
            result = covering_select(instance.B, instance.levels, instance.sets, verify=True)
            certificate = result.certificate
            n_selected = len(result.selected)
        except InvariantViolation as e:
            logging.error(f"Covering instance {index} failed: {e}")
            certificate = {'disjoint': False, 'covered': False, 'cardinality': False}
            n_selected = -1
        rows.append({'instance': index, 'n_points': len(instance.B), 'levels': instance.sets.N,
                     'shell': instance.shell, 'n_selected': n_selected, **certificate})
    return rows
