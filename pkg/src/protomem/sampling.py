"""Group-based mini-batch construction.

Every batch is a list of single-class groups of exactly ``k`` distinct
examples. Two strategies produce them: iterate-and-shuffle walks a shuffled
pool of groups that partitions the dataset, and classes-then-images picks
classes first and then ``k`` images of each. A composite sampler
concatenates sub-batches from several strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ProtomemError
from .mining import DoppelgangerTable, HardnessTable


class EmptyPool(ProtomemError, ValueError):
    """No class has enough examples to form a group."""


@dataclass
class GroupedBatch:
    groups: list[tuple[int, np.ndarray]]

    @property
    def size(self) -> int:
        return sum(len(ids) for _, ids in self.groups)

    def example_ids(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([ids for _, ids in self.groups])

    def labels(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.full(len(ids), c, dtype=np.int64) for c, ids in self.groups])

    def class_ids(self) -> list[int]:
        """Distinct classes in order of first appearance."""
        return list(dict.fromkeys(c for c, _ in self.groups))

    def merged(self) -> dict[int, np.ndarray]:
        """Positions (into ``example_ids()``) of each class's examples, groups merged."""
        positions: dict[int, list[np.ndarray]] = {}
        offset = 0
        for class_id, ids in self.groups:
            positions.setdefault(class_id, []).append(np.arange(offset, offset + len(ids)))
            offset += len(ids)
        return {c: np.concatenate(p) for c, p in positions.items()}


def eligible_classes(class_examples: Sequence[np.ndarray], k: int) -> tuple[np.ndarray, int]:
    """Ids of classes with at least ``k`` examples, and how many were excluded."""
    counts = np.array([len(ids) for ids in class_examples])
    keep = np.flatnonzero(counts >= k)
    return keep, len(counts) - len(keep)


def build_group_pool(
    class_examples: Sequence[np.ndarray], k: int, rng: np.random.Generator
) -> tuple[list[tuple[int, np.ndarray]], int]:
    """Randomly partition each eligible class into groups of ``k``.

    A leftover (count mod k) is completed with distinct examples resampled
    from the rest of the class. Returns the pool and the number of classes
    excluded for having fewer than ``k`` examples.
    """
    keep, excluded = eligible_classes(class_examples, k)
    if len(keep) == 0:
        raise EmptyPool(f"no class has at least k={k} examples")
    pool = []
    for class_id in keep:
        ids = rng.permutation(np.asarray(class_examples[class_id], dtype=np.int64))
        full = len(ids) // k * k
        for start in range(0, full, k):
            pool.append((int(class_id), ids[start : start + k]))
        if full < len(ids):
            leftover = ids[full:]
            filler = rng.choice(ids[:full], size=k - len(leftover), replace=False)
            pool.append((int(class_id), np.concatenate([leftover, filler])))
    return pool, excluded


class IterateShuffleSampler:
    """Consume a shuffled group pool; regroup and reshuffle when it runs out."""

    def __init__(self, class_examples: Sequence[np.ndarray], k: int, rng: np.random.Generator):
        self.class_examples = class_examples
        self.k = k
        self.rng = rng
        self.epoch = 0
        self._pool: list[tuple[int, np.ndarray]] = []
        self._pos = 0
        self.excluded = 0

    def _new_epoch(self) -> None:
        pool, self.excluded = build_group_pool(self.class_examples, self.k, self.rng)
        self._pool = [pool[i] for i in self.rng.permutation(len(pool))]
        self._pos = 0
        self.epoch += 1

    def next_groups(self, n: int) -> list[tuple[int, np.ndarray]]:
        out = []
        while len(out) < n:
            if self._pos >= len(self._pool):
                self._new_epoch()
            take = min(n - len(out), len(self._pool) - self._pos)
            out.extend(self._pool[self._pos : self._pos + take])
            self._pos += take
        return out

    def next_batch(self, groups_per_batch: int) -> GroupedBatch:
        return GroupedBatch(self.next_groups(groups_per_batch))


def weighted_draw_without_replacement(
    weights: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Successive sampling: each draw picks a remaining index with probability
    proportional to its weight. When the remaining weight is zero the draw is
    uniform over what is left."""
    weights = np.asarray(weights, dtype=np.float64).copy()
    if size > len(weights):
        raise ValueError("cannot draw more items than available")
    taken = np.zeros(len(weights), dtype=bool)
    picks = np.empty(size, dtype=np.int64)
    for i in range(size):
        total = weights.sum()
        if total > 0:
            cdf = np.cumsum(weights)
            j = int(np.searchsorted(cdf, rng.random() * total, side="right"))
            j = min(j, len(weights) - 1)
            while weights[j] == 0:  # guard against landing on a zero-width bin
                j -= 1
        else:
            free = np.flatnonzero(~taken)
            j = int(free[rng.integers(len(free))])
        picks[i] = j
        taken[j] = True
        weights[j] = 0.0
    return picks


def draw_class_examples(
    example_ids: np.ndarray,
    k: int,
    rng: np.random.Generator,
    hardness: HardnessTable | None = None,
    h: float = 0.0,
) -> np.ndarray:
    """``ceil(h*k)`` hardness-proportional picks, then uniform picks from the rest."""
    example_ids = np.asarray(example_ids, dtype=np.int64)
    n_hard = math.ceil(h * k) if hardness is not None else 0
    if n_hard:
        hard_pos = weighted_draw_without_replacement(hardness.values[example_ids], n_hard, rng)
    else:
        hard_pos = np.zeros(0, dtype=np.int64)
    rest = np.setdiff1d(np.arange(len(example_ids)), hard_pos, assume_unique=True)
    uniform_pos = rng.choice(rest, size=k - n_hard, replace=False)
    return example_ids[np.concatenate([hard_pos, uniform_pos])]


class UniformClassSampler:
    """Distinct classes drawn uniformly from the eligible ones."""

    def __init__(self, classes: np.ndarray, rng: np.random.Generator):
        self.classes = np.asarray(classes, dtype=np.int64)
        self.rng = rng

    def __call__(self, n: int) -> list[int]:
        return self.rng.choice(self.classes, size=n, replace=False).tolist()


class DoppelgangerClassSampler:
    """``n_random`` uniform seed classes; remaining slots filled with doppelgangers.

    Slots cycle through the classes already chosen and draw one member of
    that class's doppelganger set. Empty sets, ineligible or already chosen
    classes fall back to a uniform random class.
    """

    def __init__(self, classes: np.ndarray, table: DoppelgangerTable, n_random: int, rng: np.random.Generator):
        self.classes = np.asarray(classes, dtype=np.int64)
        self._eligible = set(self.classes.tolist())
        self.table = table
        self.n_random = n_random
        self.rng = rng
        self.hits = 0

    def __call__(self, n: int) -> list[int]:
        chosen = self.rng.choice(self.classes, size=min(self.n_random, n), replace=False).tolist()
        seen = set(chosen)
        i = 0
        while len(chosen) < n:
            candidate = self.table.sample(chosen[i % len(chosen)], self.rng) if chosen else None
            i += 1
            if candidate is None or candidate in seen or candidate not in self._eligible:
                candidate = int(self.rng.choice(self.classes))
                if candidate in seen:
                    continue
            else:
                self.hits += 1
            chosen.append(candidate)
            seen.add(candidate)
        return chosen


class ClassesThenImagesSampler:
    def __init__(
        self,
        class_examples: Sequence[np.ndarray],
        k: int,
        rng: np.random.Generator,
        class_sampler: Callable[[int], list[int]] | None = None,
        hardness: HardnessTable | None = None,
        h: float = 0.0,
    ):
        self.class_examples = class_examples
        self.k = k
        self.rng = rng
        self.classes, self.excluded = eligible_classes(class_examples, k)
        if len(self.classes) == 0:
            raise EmptyPool(f"no class has at least k={k} examples")
        self.class_sampler = class_sampler or UniformClassSampler(self.classes, rng)
        self.hardness = hardness
        self.h = h

    def next_groups(self, n: int) -> list[tuple[int, np.ndarray]]:
        return [
            (c, draw_class_examples(self.class_examples[c], self.k, self.rng, self.hardness, self.h))
            for c in self.class_sampler(n)
        ]

    def next_batch(self, groups_per_batch: int) -> GroupedBatch:
        return GroupedBatch(self.next_groups(groups_per_batch))


def next_batch_iterate_shuffle(sampler: IterateShuffleSampler, groups_per_batch: int) -> GroupedBatch:
    return sampler.next_batch(groups_per_batch)


def next_batch_classes_then_images(sampler: ClassesThenImagesSampler, groups_per_batch: int) -> GroupedBatch:
    return sampler.next_batch(groups_per_batch)


class CompositeSampler:
    """Concatenate ``(sampler, n_groups)`` sub-batches in plan order."""

    def __init__(self, plan: Sequence[tuple[object, int]]):
        if not plan:
            raise ValueError("empty composite plan")
        self.plan = list(plan)

    @property
    def groups_per_batch(self) -> int:
        return sum(n for _, n in self.plan)

    def next_batch(self, groups_per_batch: int | None = None) -> GroupedBatch:
        if groups_per_batch is not None and groups_per_batch != self.groups_per_batch:
            raise ValueError(
                f"plan yields {self.groups_per_batch} groups, batch wants {groups_per_batch}"
            )
        groups = []
        for sampler, n in self.plan:
            groups.extend(sampler.next_groups(n))
        return GroupedBatch(groups)


def next_batch_composite(plan: Sequence[tuple[object, int]]) -> GroupedBatch:
    return CompositeSampler(plan).next_batch()
