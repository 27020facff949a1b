"""Bounded, recency-ordered store of class prototypes.

The store is a queue: new and refreshed prototypes go to the head, and when
the capacity is reached the tail (least recently refreshed) entry is disposed
of. Vectors live in a preallocated ``(M, D)`` slot array so the classifier
footprint is exactly ``M * D`` reals regardless of how many classes exist.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import BinaryIO, Iterable

import numpy as np

from .core import ProtomemError, normalize, normalize_rows

_HEADER = struct.Struct("<QQQ")
_ENTRY = struct.Struct("<QQ")


class DuplicateClass(ProtomemError, KeyError):
    """Enqueue was called for a class that already has a prototype."""


class MissingClass(ProtomemError, KeyError):
    """Refresh or update was called for a class without a prototype."""


def generate_prototype(embeddings) -> np.ndarray:
    """Average a group of same-class embeddings and put the mean on the sphere."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 2:
        raise ValueError("need a (k, D) array with k >= 2")
    return normalize(embeddings.mean(axis=0))


def blend(p_mem, p_new, r: float) -> np.ndarray:
    """Refresh blend ``normalize(r * p_new + (1 - r) * p_mem)``.

    The endpoints skip arithmetic so that r=0 keeps ``p_mem`` and r=1 returns
    ``p_new`` bit-for-bit.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("refresh ratio must lie in [0, 1]")
    p_mem = np.asarray(p_mem, dtype=np.float64)
    p_new = np.asarray(p_new, dtype=np.float64)
    if r == 0.0:
        return p_mem.copy()
    if r == 1.0:
        return p_new.copy()
    return normalize(r * p_new + (1.0 - r) * p_mem)


@dataclass(frozen=True)
class Disposal:
    """Outcome of an enqueue: the evicted class, if any."""

    evicted: int | None = None

    def __bool__(self) -> bool:
        return self.evicted is not None


class PrototypeStore:
    """Queue of at most ``capacity`` unit prototypes keyed by class id."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self._vectors = np.zeros((capacity, dim), dtype=np.float64)
        self._steps = np.zeros(capacity, dtype=np.uint64)
        # class_id -> slot, oldest first; the last item is the queue head
        self._order: OrderedDict[int, int] = OrderedDict()
        self._free = list(range(capacity - 1, -1, -1))

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self._order

    @property
    def full(self) -> bool:
        return len(self._order) == self.capacity

    def class_ids(self) -> list[int]:
        """Class ids head first (most recently refreshed first)."""
        return list(reversed(self._order))

    def get(self, class_id: int) -> np.ndarray:
        try:
            slot = self._order[int(class_id)]
        except KeyError:
            raise MissingClass(class_id) from None
        return self._vectors[slot].copy()

    def last_refresh_step(self, class_id: int) -> int:
        try:
            return int(self._steps[self._order[int(class_id)]])
        except KeyError:
            raise MissingClass(class_id) from None

    def _check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"expected vector of dimension {self.dim}, got {v.shape}")
        return v

    def enqueue(self, class_id: int, prototype, step: int) -> Disposal:
        class_id = int(class_id)
        if class_id in self._order:
            raise DuplicateClass(class_id)
        prototype = normalize(self._check_vector(prototype))
        evicted = None
        if not self._free:
            evicted, slot = self._order.popitem(last=False)
            self._free.append(slot)
        slot = self._free.pop()
        self._vectors[slot] = prototype
        self._steps[slot] = step
        self._order[class_id] = slot
        return Disposal(evicted)

    def refresh(self, class_id: int, new_prototype, r: float, step: int) -> np.ndarray:
        """Blend a freshly generated prototype into the stored one and move it to the head.

        A numerically zero blend raises ZeroVector and leaves the entry as it was.
        """
        class_id = int(class_id)
        try:
            slot = self._order[class_id]
        except KeyError:
            raise MissingClass(class_id) from None
        updated = blend(self._vectors[slot], self._check_vector(new_prototype), r)
        self._vectors[slot] = updated
        self._steps[slot] = step
        self._order.move_to_end(class_id)
        return updated.copy()

    def apply_gradients(self, updates: Iterable[tuple[int, np.ndarray]], learning_rate: float) -> None:
        """SGD step ``normalize(p - lr * g)`` per class; queue order is untouched."""
        updates = list(updates)
        slots = []
        for class_id, grad in updates:
            try:
                slots.append(self._order[int(class_id)])
            except KeyError:
                raise MissingClass(class_id) from None
        if not updates or learning_rate == 0:
            return
        grads = np.stack([self._check_vector(g) for _, g in updates])
        self.apply_gradient_block(np.asarray(slots), grads, learning_rate)

    def apply_gradient_block(self, slots: np.ndarray, grads: np.ndarray, learning_rate: float) -> None:
        """Vectorized ``apply_gradients`` addressed by slot (see ``snapshot_slots``)."""
        if learning_rate == 0 or len(slots) == 0:
            return
        self._vectors[slots] = normalize_rows(self._vectors[slots] - learning_rate * grads)

    def snapshot_slots(self) -> tuple[list[int], np.ndarray]:
        """Class ids (head first) and their slot indices; valid until the next mutation."""
        ids = list(reversed(self._order))
        slots = np.fromiter((self._order[c] for c in ids), dtype=np.intp, count=len(ids))
        return ids, slots

    def snapshot_weights(self) -> list[tuple[int, np.ndarray]]:
        """Point-in-time copy of ``(class_id, prototype)`` pairs, head first."""
        ids, slots = self.snapshot_slots()
        vectors = self._vectors[slots]
        return list(zip(ids, vectors))

    def snapshot_matrix(self) -> tuple[list[int], np.ndarray]:
        ids, slots = self.snapshot_slots()
        return ids, self._vectors[slots]

    def buffers(self) -> dict[str, np.ndarray]:
        """Arrays holding classifier state, for allocation accounting."""
        return {"prototypes": self._vectors}

    # checkpoint format: header (D, M, count) then per entry head first:
    # class_id u64, last_refresh_step u64, D float64; all little-endian
    def write(self, fh: BinaryIO) -> None:
        fh.write(_HEADER.pack(self.dim, self.capacity, len(self)))
        for class_id in reversed(self._order):
            slot = self._order[class_id]
            fh.write(_ENTRY.pack(class_id, int(self._steps[slot])))
            fh.write(self._vectors[slot].astype("<f8").tobytes())

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def read(cls, fh: BinaryIO) -> PrototypeStore:
        dim, capacity, count = _HEADER.unpack(_read_exact(fh, _HEADER.size))
        store = cls(capacity, dim)
        entries = []
        for _ in range(count):
            class_id, step = _ENTRY.unpack(_read_exact(fh, _ENTRY.size))
            vec = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8").astype(np.float64)
            entries.append((class_id, step, vec))
        for class_id, step, vec in reversed(entries):
            slot = store._free.pop()
            store._vectors[slot] = vec
            store._steps[slot] = step
            store._order[class_id] = slot
        return store

    @classmethod
    def from_bytes(cls, data: bytes) -> PrototypeStore:
        return cls.read(io.BytesIO(data))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data

