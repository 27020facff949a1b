"""Measurements: prototype obsolescence, classifier memory, per-step compute cost."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import SampledSoftmaxSystem
from .core import PMConfig, normalize, random_unit_vectors
from .data import SyntheticDataset
from .encoder import LinearEncoder
from .systems import PrototypeMemorySystem, count_reals
from .train import Trainer, TrainConfig


def class_center(encoder: LinearEncoder, dataset: SyntheticDataset, class_id: int) -> np.ndarray:
    """Normalized mean embedding of every example of the class."""
    return normalize(encoder(dataset.examples[dataset.class_examples[class_id]]).mean(axis=0))


def default_n_longest(num_classes: int) -> int:
    return max(1, min(100, num_classes // 20))


def longest_unsampled(last_sampled: np.ndarray, n: int) -> np.ndarray:
    """The ``n`` classes sampled at least once whose last sampling is oldest (ties: lowest id)."""
    seen = np.flatnonzero(last_sampled >= 0)
    order = np.lexsort((seen, last_sampled[seen]))
    return seen[order[:n]]


def cosine_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``1 - cos``; inputs need not be normalized."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return 1.0 - np.clip(cos, -1.0, 1.0)


def obsolescence_metric(
    system,
    encoder: LinearEncoder,
    dataset: SyntheticDataset,
    n_longest: int | None = None,
    seed: int = 0,
) -> float | None:
    """Mean ``1 - cos(prototype, class center)`` over the longest unsampled classes.

    Any random image choice for a class is drawn from a generator seeded by
    ``(seed, class_id)``, so repeated measurements of the same class differ
    only through the encoder. Returns None when no class has been sampled yet.
    """
    if n_longest is None:
        n_longest = default_n_longest(dataset.num_classes)
    classes = longest_unsampled(system.last_sampled, n_longest)
    if len(classes) == 0:
        return None
    protos = np.stack(
        [
            system.obsolescence_prototype(int(c), encoder, dataset, np.random.default_rng([seed, int(c)]))
            for c in classes
        ]
    )
    centers = np.stack([class_center(encoder, dataset, int(c)) for c in classes])
    return float(cosine_distance(protos, centers).mean())


def run_obsolescence(dataset, pm: PMConfig, cfg: TrainConfig, interval: int, n_longest: int | None = None):
    """Train and measure obsolescence at step 0 and every ``interval`` steps."""
    trainer = Trainer(dataset, cfg, pm)
    n_longest = n_longest or default_n_longest(dataset.num_classes)
    curve = [(0, obsolescence_metric(trainer.system, trainer.encoder, dataset, n_longest, seed=pm.seed))]
    for _ in range(cfg.steps):
        record = trainer.step()
        if interval and record.step % interval == 0:
            value = obsolescence_metric(trainer.system, trainer.encoder, dataset, n_longest, seed=pm.seed)
            curve.append((record.step, value))
    return trainer, curve


def memory_report(system) -> dict[str, int]:
    return system.memory_report()


def allocated_reals(system) -> dict[str, int]:
    """Reals held by the system's classifier buffers, counted from the arrays themselves."""
    counts = count_reals(system.buffers())
    return {"device_resident_reals": counts["device"], "persistent_reals": counts["persistent"]}


def symbolic_memory(system: str, num_classes: int, sampled: int, dim: int) -> dict[str, int]:
    """Classifier memory by method: device-resident and persistent reals."""
    if system == "pm":
        return {"device_resident_reals": sampled * dim, "persistent_reals": 0}
    if system == "full":
        return {"device_resident_reals": num_classes * dim, "persistent_reals": 0}
    return {"device_resident_reals": sampled * dim, "persistent_reals": num_classes * dim}


@dataclass
class BenchRow:
    system: str
    num_classes: int
    sampled: int
    similarity_ms: float
    generation_ms: float | None
    transfer_ms: float | None
    transfer_bytes: int

    FIELDS = ("system", "num_classes", "sampled", "similarity_ms", "generation_ms", "transfer_ms", "transfer_bytes")

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        return [
            self.system,
            str(self.num_classes),
            str(self.sampled),
            fmt(self.similarity_ms),
            fmt(self.generation_ms),
            fmt(self.transfer_ms),
            str(self.transfer_bytes),
        ]


def _batch(rng, n_groups: int, k: int, dim: int, num_classes: int):
    classes = rng.choice(num_classes, size=n_groups, replace=False)
    emb = random_unit_vectors(n_groups * k, dim, rng)
    return classes, emb


def bench_system(
    system: str,
    num_classes: int,
    sampled: int,
    dim: int = 256,
    batch_size: int = 128,
    k: int = 4,
    steps: int = 100,
    warmup: int = 10,
    seed: int = 0,
) -> BenchRow:
    """Mean per-step time of the classifier's main operations.

    Similarity is the ``(batch, D) x (D, sampled)`` cosine product. Prototype
    Memory also times generation plus refresh/enqueue (not the snapshot
    copy); measurement starts only once its store is full. Baselines time the host-to-device copy of
    the sampled weight block.
    """
    rng = np.random.default_rng(seed)
    n_groups = batch_size // k
    sim_t = gen_t = xfer_t = 0.0
    xfer_bytes = 0
    if system == "pm":
        pm = PrototypeMemorySystem(num_classes, sampled, dim, k, 0.2)
        # fill the store before timing
        fill_step = 0
        while not pm.store.full:
            fill_step += 1
            ids = rng.choice(num_classes, size=min(sampled - len(pm.store), 1024), replace=False)
            for c in ids:
                if c not in pm.store:
                    pm.store.enqueue(int(c), random_unit_vectors(1, dim, rng)[0], fill_step)
        for step in range(warmup + steps):
            classes, emb = _batch(rng, n_groups, k, dim, num_classes)
            groups = {int(c): emb[i * k : (i + 1) * k] for i, c in enumerate(classes)}
            t0 = time.perf_counter()
            pm.generate(fill_step + step + 1, groups)
            t1 = time.perf_counter()
            _, weights = pm.store.snapshot_matrix()
            t2 = time.perf_counter()
            emb @ weights.T
            t3 = time.perf_counter()
            if step >= warmup:
                gen_t += t1 - t0
                sim_t += t3 - t2
        return BenchRow("pm", num_classes, sampled, 1e3 * sim_t / steps, 1e3 * gen_t / steps, None, 0)

    mode = system
    base = SampledSoftmaxSystem(mode, num_classes, dim, sampled, rng)
    for step in range(warmup + steps):
        classes, emb = _batch(rng, n_groups, k, dim, num_classes)
        groups = {int(c): None for c in classes}
        before = base.transfer_bytes_total
        t0 = time.perf_counter()
        clf = base.prepare(step + 1, groups)
        t1 = time.perf_counter()
        emb @ clf.weights.T
        t2 = time.perf_counter()
        if step >= warmup:
            xfer_t += t1 - t0
            sim_t += t2 - t1
            xfer_bytes = base.transfer_bytes_total - before
    transfer_ms = None if mode == "full" else 1e3 * xfer_t / steps
    return BenchRow(mode, num_classes, base.sample_size, 1e3 * sim_t / steps, None, transfer_ms, xfer_bytes)


def bench_step_costs(configs: Sequence[dict], **kwargs) -> list[BenchRow]:
    """Run ``bench_system`` for each ``{"system", "num_classes", "sampled"}`` entry."""
    return [bench_system(c["system"], c["num_classes"], c["sampled"], **kwargs) for c in configs]


def write_rows(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

