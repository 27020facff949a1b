"""Sampled-softmax competitors that keep a weight for every class.

PPRN and D-Softmax-K both hold the full ``(N_c, D)`` matrix in persistent
(host) memory and, each step, copy the rows of the batch's classes plus
uniformly drawn negatives into a device-resident active buffer. The copy is
counted in bytes so its cost can be compared with Prototype Memory, which
has no such transfer. Full softmax keeps the whole matrix on the device.
"""

from __future__ import annotations

import numpy as np

from .core import LossConfig, ProtomemError, random_unit_vectors
from .losses import LossGrad, loss_and_grad
from .systems import DEVICE, PERSISTENT, Classifier, apply_rows

SAMPLED_MODES = ("pprn", "dsoftmaxk")
MODES = SAMPLED_MODES + ("full",)


class InsufficientClasses(ProtomemError, ValueError):
    pass


class FullWeightMatrix:
    """One unit weight per class, randomly initialized on the sphere."""

    def __init__(self, num_classes: int, dim: int, rng: np.random.Generator):
        self.weights = random_unit_vectors(num_classes, dim, rng)

    @property
    def num_classes(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def pprn_sample(num_classes: int, batch_classes, sample_size: int, rng: np.random.Generator) -> np.ndarray:
    """Batch classes first (in order) followed by distinct uniform negatives."""
    if sample_size > num_classes:
        raise InsufficientClasses(f"sample size {sample_size} exceeds {num_classes} classes")
    positives = np.asarray(list(dict.fromkeys(int(c) for c in batch_classes)), dtype=np.int64)
    if sample_size < len(positives):
        raise ValueError("sample size smaller than the number of batch classes")
    mask = np.ones(num_classes, dtype=bool)
    mask[positives] = False
    negatives = rng.choice(np.flatnonzero(mask), size=sample_size - len(positives), replace=False)
    return np.concatenate([positives, negatives.astype(np.int64)])


# D-Softmax-K draws its negatives the same way; it differs only in the loss.
dsoftmaxk_sample = pprn_sample


def baseline_step(
    matrix: FullWeightMatrix,
    embeddings: np.ndarray,
    labels,
    sampled: np.ndarray,
    loss: LossConfig,
    learning_rate: float,
) -> LossGrad:
    """One classifier update restricted to ``sampled`` rows; other rows are not touched."""
    sampled = np.asarray(sampled, dtype=np.int64)
    column = {int(c): j for j, c in enumerate(sampled)}
    targets = np.array([column.get(int(y), -1) for y in labels])
    active = matrix.weights[sampled]
    grad = loss_and_grad(loss, embeddings, active, targets)
    matrix.weights[sampled] = apply_rows(active, grad.d_prototypes, learning_rate)
    return grad


class SampledSoftmaxSystem:
    def __init__(self, mode: str, num_classes: int, dim: int, sample_size: int, rng: np.random.Generator):
        if mode not in MODES:
            raise ValueError(f"unknown baseline {mode!r}")
        self.name = mode
        self.rng = rng
        self.matrix = FullWeightMatrix(num_classes, dim, rng)
        self.num_classes = num_classes
        self.sample_size = num_classes if mode == "full" else sample_size
        if self.sample_size > num_classes:
            raise InsufficientClasses(f"sample size {sample_size} exceeds {num_classes} classes")
        self.active = None if mode == "full" else np.empty((self.sample_size, dim))
        self.last_sampled = np.full(num_classes, -1, dtype=np.int64)
        self.transfer_bytes_total = 0
        self.evictions = 0
        self.refreshes = 0

    @property
    def transfer_bytes_per_step(self) -> int:
        return 0 if self.active is None else self.active.nbytes

    @property
    def occupancy(self) -> int:
        return self.sample_size

    def sample(self, batch_classes) -> np.ndarray:
        if self.active is None:
            return np.arange(self.num_classes)
        return pprn_sample(self.num_classes, batch_classes, self.sample_size, self.rng)

    def prepare(self, step: int, class_embeddings: dict[int, np.ndarray], rng=None) -> Classifier:
        sampled = self.sample(list(class_embeddings))
        self.last_sampled[sampled] = step
        if self.active is None:
            return Classifier(list(range(self.num_classes)), self.matrix.weights, sampled)
        # host -> device copy of the sampled block
        np.take(self.matrix.weights, sampled, axis=0, out=self.active)
        self.transfer_bytes_total += self.active.nbytes
        return Classifier(sampled.tolist(), self.active, sampled)

    def update(self, classifier: Classifier, d_prototypes: np.ndarray, learning_rate: float) -> None:
        rows = classifier.handle
        self.matrix.weights[rows] = apply_rows(classifier.weights, d_prototypes, learning_rate)

    def obsolescence_prototype(self, class_id: int, encoder=None, dataset=None, rng=None) -> np.ndarray:
        return self.matrix.weights[class_id].copy()

    def buffers(self) -> dict[str, list[np.ndarray]]:
        if self.active is None:
            return {DEVICE: [self.matrix.weights], PERSISTENT: []}
        return {DEVICE: [self.active], PERSISTENT: [self.matrix.weights]}

    def memory_report(self) -> dict[str, int]:
        dim = self.matrix.dim
        if self.active is None:
            return {"device_resident_reals": self.num_classes * dim, "persistent_reals": 0}
        return {
            "device_resident_reals": self.sample_size * dim,
            "persistent_reals": self.num_classes * dim,
        }
