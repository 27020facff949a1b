"""Classifier back-ends driven by the training loop.

A system turns a batch into a classifier (class ids plus weight rows) and
takes the loss gradient for those rows afterwards. ``PrototypeMemorySystem``
builds its classifier from the prototype store; the sampled-softmax
baselines live in ``protomem.baselines``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import normalize_rows
from .memory import PrototypeStore, generate_prototype

DEVICE = "device"
PERSISTENT = "persistent"


@dataclass
class Classifier:
    class_ids: list[int]
    weights: np.ndarray
    handle: np.ndarray
    events: dict[int, str] = field(default_factory=dict)

    def columns(self) -> dict[int, int]:
        return {c: j for j, c in enumerate(self.class_ids)}


def count_reals(buffers: dict[str, list[np.ndarray]]) -> dict[str, int]:
    return {side: sum(int(a.size) for a in arrays) for side, arrays in buffers.items()}


class PrototypeMemorySystem:
    """Online-generated prototypes in a bounded store.

    ``prepare`` generates one prototype per batch class from the supplied
    embeddings (student or teacher), refreshes classes already in memory and
    enqueues the rest, then snapshots the store as the classifier.
    """

    name = "pm"
    transfer_bytes_per_step = 0

    def __init__(self, num_classes: int, capacity: int, dim: int, k: int, r: float):
        self.store = PrototypeStore(capacity, dim)
        self.num_classes = num_classes
        self.k = k
        self.r = r
        self.last_sampled = np.full(num_classes, -1, dtype=np.int64)
        self.evictions = 0
        self.refreshes = 0
        self.enqueues = 0
        self.transfer_bytes_total = 0

    @property
    def occupancy(self) -> int:
        return len(self.store)

    def generate(self, step: int, class_embeddings: dict[int, np.ndarray]) -> dict[int, str]:
        """Refresh or enqueue one generated prototype per class; returns the event per class."""
        events = {}
        for class_id, emb in class_embeddings.items():
            p_new = generate_prototype(emb)
            if class_id in self.store:
                self.store.refresh(class_id, p_new, self.r, step)
                self.refreshes += 1
                events[class_id] = "refresh"
            else:
                if self.store.enqueue(class_id, p_new, step):
                    self.evictions += 1
                self.enqueues += 1
                events[class_id] = "enqueue"
            self.last_sampled[class_id] = step
        return events

    def prepare(self, step: int, class_embeddings: dict[int, np.ndarray], rng=None) -> Classifier:
        events = self.generate(step, class_embeddings)
        ids, slots = self.store.snapshot_slots()
        return Classifier(ids, self.store._vectors[slots], slots, events)

    def update(self, classifier: Classifier, d_prototypes: np.ndarray, learning_rate: float) -> None:
        self.store.apply_gradient_block(classifier.handle, d_prototypes, learning_rate)

    def obsolescence_prototype(self, class_id: int, encoder, dataset, rng) -> np.ndarray:
        """A fresh prototype from ``k`` random images of the class under the current encoder."""
        ids = dataset.class_examples[class_id]
        pick = rng.choice(ids, size=min(self.k, len(ids)), replace=False)
        emb = encoder(dataset.examples[pick])
        return generate_prototype(emb) if len(emb) > 1 else emb[0]

    def buffers(self) -> dict[str, list[np.ndarray]]:
        return {DEVICE: [self.store._vectors], PERSISTENT: []}

    def memory_report(self) -> dict[str, int]:
        return {
            "device_resident_reals": self.store.capacity * self.store.dim,
            "persistent_reals": 0,
        }


def apply_rows(weights: np.ndarray, grads: np.ndarray, learning_rate: float) -> np.ndarray:
    """``normalize(w - lr * g)`` row-wise; rows are returned unchanged when lr is 0."""
    if learning_rate == 0:
        return weights
    return normalize_rows(weights - learning_rate * grads)
