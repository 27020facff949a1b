"""Hard class and hard example bookkeeping.

``DoppelgangerTable`` keeps, per class, a set of confusable classes: the top
scoring non-target class of a classified example joins its target's set, and
set members that were in the classifier but did not win are dropped.
``HardnessTable`` stores ``1 - cos(embedding, target prototype)`` per example.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .memory import _read_exact

INITIAL_HARDNESS = 2.0

_COUNT = struct.Struct("<Q")


class DoppelgangerTable:
    def __init__(self):
        self.sets: dict[int, set[int]] = {}

    def __getitem__(self, class_id: int) -> set[int]:
        return self.sets.get(int(class_id), set())

    def __len__(self) -> int:
        return len(self.sets)

    def update(self, target: int, sampled: Iterable[int] | set[int], top: int) -> None:
        """Apply one classification event."""
        target, top = int(target), int(top)
        if top == target:
            raise ValueError("top non-target class equals the target")
        members = self.sets.setdefault(target, set())
        if not isinstance(sampled, (set, frozenset)):
            sampled = set(sampled)
        members.difference_update([c for c in members if c in sampled and c != top])
        members.add(top)

    def update_many(self, events: Iterable[tuple[int, Iterable[int], int]]) -> None:
        for target, sampled, top in events:
            self.update(target, sampled, top)

    def sample(self, class_id: int, rng: np.random.Generator) -> int | None:
        """Uniform draw from the class's set, or None when it is empty."""
        members = self.sets.get(int(class_id))
        if not members:
            return None
        ordered = sorted(members)
        return ordered[int(rng.integers(len(ordered)))]

    def write(self, fh: BinaryIO) -> None:
        fh.write(_COUNT.pack(len(self.sets)))
        for class_id in sorted(self.sets):
            members = sorted(self.sets[class_id])
            fh.write(struct.pack(f"<QQ{len(members)}Q", class_id, len(members), *members))

    @classmethod
    def read(cls, fh: BinaryIO) -> DoppelgangerTable:
        table = cls()
        (count,) = _COUNT.unpack(_read_exact(fh, 8))
        for _ in range(count):
            class_id, n = struct.unpack("<QQ", _read_exact(fh, 16))
            table.sets[class_id] = set(struct.unpack(f"<{n}Q", _read_exact(fh, 8 * n)))
        return table


def update_doppelgangers(table: DoppelgangerTable, classified) -> None:
    """Apply ``(target_class, sampled_class_ids, top_nontarget_class)`` events in order."""
    table.update_many(classified)


def sample_doppelganger_class(table: DoppelgangerTable, class_id: int, rng) -> int | None:
    return table.sample(class_id, rng)


def top_nontarget(cosines: np.ndarray, targets: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
    """Class id of the highest scoring non-target column per row, or -1 if there is none.

    Ties go to the lowest class id.
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    n, m = cosines.shape
    if m < 2:
        return np.full(n, -1, dtype=np.int64)
    ids = np.asarray(class_ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    scores = cosines[:, order].copy()
    # position of each row's target within the id-sorted columns
    inverse = np.empty(m, dtype=np.int64)
    inverse[order] = np.arange(m)
    scores[np.arange(n), inverse[np.asarray(targets)]] = -np.inf
    # argmax returns the first maximum, i.e. the lowest class id among ties
    return ids[order][np.argmax(scores, axis=1)]


class HardnessTable:
    def __init__(self, num_examples: int):
        self.values = np.full(num_examples, INITIAL_HARDNESS, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, example_id):
        return self.values[example_id]

    def update(self, example_ids, cos_target) -> None:
        """Overwrite hardness with ``1 - cos`` for each classified example."""
        cos = np.clip(np.asarray(cos_target, dtype=np.float64), -1.0, 1.0)
        self.values[np.asarray(example_ids, dtype=np.int64)] = 1.0 - cos

    def write(self, fh: BinaryIO) -> None:
        fh.write(_COUNT.pack(len(self.values)))
        fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def read(cls, fh: BinaryIO) -> HardnessTable:
        (count,) = _COUNT.unpack(_read_exact(fh, 8))
        table = cls(count)
        table.values[:] = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
        return table


def update_hardness(table: HardnessTable, scored: Iterable[tuple[int, float]]) -> None:
    scored = list(scored)
    if scored:
        ids, cos = zip(*scored)
        table.update(ids, cos)
