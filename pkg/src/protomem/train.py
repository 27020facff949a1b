"""End-to-end training of a linear encoder against a prototype classifier.

One step: sample a grouped batch, encode it, generate prototypes and refresh
or enqueue them (Prototype Memory) or sample a class subset (baselines),
snapshot the classifier, compute the margin loss and its gradients, update
the classifier rows, then update the encoder. Plain SGD throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .baselines import SAMPLED_MODES, SampledSoftmaxSystem
from .core import ConfigError, PMConfig, _check_keys, normalize_rows
from .data import SyntheticDataset
from .encoder import LinearEncoder
from .losses import loss_and_grad
from .mining import DoppelgangerTable, HardnessTable, top_nontarget
from .sampling import (
    ClassesThenImagesSampler,
    CompositeSampler,
    DoppelgangerClassSampler,
    IterateShuffleSampler,
    eligible_classes,
)
from .systems import PrototypeMemorySystem

SYSTEMS = ("pm",) + SAMPLED_MODES + ("full",)
STRATEGIES = ("iterate_shuffle", "classes_then_images")
LOG_FIELDS = ("step", "loss", "occupancy", "evictions", "refreshes", "eval_accuracy")


@dataclass
class TrainConfig:
    steps: int = 1000
    learning_rate: float = 0.1
    lr_drops: list[int] = field(default_factory=list)
    prototype_lr: float | None = None
    groups_per_batch: int = 8
    plan: list[dict[str, Any]] | None = None
    system: str = "pm"
    sample_size: int = 200
    mdm: bool = False
    mdm_random: int | None = None
    eval_interval: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        self.lr_drops = [int(s) for s in self.lr_drops]
        if any(b <= a for a, b in zip(self.lr_drops, self.lr_drops[1:])):
            raise ConfigError("lr_drops must be strictly increasing")
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {', '.join(SYSTEMS)}")
        if self.groups_per_batch < 1:
            raise ConfigError("groups_per_batch must be positive")
        if self.plan is not None:
            for part in self.plan:
                if set(part) != {"strategy", "groups"} or part["strategy"] not in STRATEGIES:
                    raise ConfigError(f"bad plan entry {part!r}")
            if sum(p["groups"] for p in self.plan) != self.groups_per_batch:
                raise ConfigError("plan group counts must sum to groups_per_batch")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        _check_keys(cls, data)
        return cls(**data)

    def learning_rate_at(self, step: int, base: float | None = None) -> float:
        """Piecewise constant: divided by 10 at every listed step already reached."""
        drops = sum(1 for s in self.lr_drops if step >= s)
        return (self.learning_rate if base is None else base) / 10**drops

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class StepRecord:
    step: int
    loss: float
    occupancy: int
    evictions: int
    refreshes: int
    eval_accuracy: float | None = None

    def row(self) -> list[str]:
        acc = "" if self.eval_accuracy is None else repr(self.eval_accuracy)
        return [str(self.step), repr(self.loss), str(self.occupancy), str(self.evictions), str(self.refreshes), acc]


def nearest_center_accuracy(encoder: LinearEncoder, dataset: SyntheticDataset) -> float:
    """Held-out accuracy of assigning each example to the nearest encoded class direction."""
    if dataset.held_out is None:
        inputs, labels = dataset.examples, dataset.labels
    else:
        inputs, labels = dataset.held_out, dataset.held_out_labels
    probe = encoder(dataset.directions)
    pred = np.argmax(encoder(inputs) @ probe.T, axis=1)
    return float(np.mean(pred == labels))


class Trainer:
    def __init__(
        self,
        dataset: SyntheticDataset,
        config: TrainConfig,
        pm: PMConfig,
        teacher: LinearEncoder | None = None,
        encoder: LinearEncoder | None = None,
    ):
        if teacher is not None:
            if config.system != "pm":
                raise ConfigError("teacher-generated prototypes need the pm system")
            if teacher.dim != pm.D or teacher.dim_in != dataset.dim_in:
                raise ConfigError("teacher shape does not match (D_in, D)")
        self.dataset = dataset
        self.config = config
        self.pm = pm
        self.teacher = teacher
        seeds = np.random.SeedSequence(pm.seed).spawn(4)
        enc_rng, sys_rng, sample_rng, self.diag_rng = (np.random.default_rng(s) for s in seeds)
        self.encoder = encoder or LinearEncoder.random(dataset.dim_in, pm.D, enc_rng)
        if encoder is not None and (encoder.dim_in, encoder.dim) != (dataset.dim_in, pm.D):
            raise ConfigError("encoder shape does not match (D_in, D)")
        if config.system == "pm":
            self.system = PrototypeMemorySystem(dataset.num_classes, pm.M, pm.D, pm.k, pm.r)
        else:
            self.system = SampledSoftmaxSystem(config.system, dataset.num_classes, pm.D, config.sample_size, sys_rng)
        self.hardness = HardnessTable(len(dataset))
        self.doppelgangers = DoppelgangerTable() if config.mdm else None
        self.sampler = self._build_sampler(sample_rng)
        self.step_index = 0
        self.log: list[StepRecord] = []

    def _build_sampler(self, rng: np.random.Generator) -> CompositeSampler:
        cfg, pm = self.config, self.pm
        plan = cfg.plan or [{"strategy": "iterate_shuffle", "groups": cfg.groups_per_batch}]
        parts = []
        for part in plan:
            if part["strategy"] == "iterate_shuffle":
                sampler = IterateShuffleSampler(self.dataset.class_examples, pm.k, rng)
            else:
                class_sampler = None
                if self.doppelgangers is not None:
                    classes, _ = eligible_classes(self.dataset.class_examples, pm.k)
                    n_random = cfg.mdm_random if cfg.mdm_random is not None else max(1, part["groups"] // 8)
                    class_sampler = DoppelgangerClassSampler(classes, self.doppelgangers, n_random, rng)
                sampler = ClassesThenImagesSampler(
                    self.dataset.class_examples, pm.k, rng, class_sampler, self.hardness, pm.h
                )
            parts.append((sampler, part["groups"]))
        return CompositeSampler(parts)

    def step(self) -> StepRecord:
        self.step_index += 1
        step = self.step_index
        lr = self.config.learning_rate_at(step)
        proto_lr = self.config.learning_rate_at(step, self.config.prototype_lr)

        batch = self.sampler.next_batch()
        example_ids = batch.example_ids()
        labels = batch.labels()
        inputs = self.dataset.examples[example_ids]
        raw = self.encoder.raw(inputs)
        source = normalize_rows(raw) if self.teacher is None else self.teacher(inputs)
        class_embeddings = {c: source[pos] for c, pos in batch.merged().items()}

        classifier = self.system.prepare(step, class_embeddings)
        if classifier.events and set(classifier.events) != set(class_embeddings):
            raise AssertionError("every batch class must be refreshed or enqueued exactly once")
        column = classifier.columns()
        targets = np.array([column.get(int(y), -1) for y in labels], dtype=np.int64)
        # examples whose class was evicted within this step only fed prototype generation
        keep = targets >= 0
        loss = math.nan
        if keep.any():
            grad = loss_and_grad(self.pm.loss, raw[keep], classifier.weights, targets[keep])
            loss = grad.loss
            self.system.update(classifier, grad.d_prototypes, proto_lr)
            self.encoder.sgd_step(self.encoder.grad_from_raw(inputs[keep], grad.d_embedding), lr)
            rows = np.arange(int(keep.sum()))
            self.hardness.update(example_ids[keep], grad.cosines[rows, targets[keep]])
            if self.doppelgangers is not None and len(classifier.class_ids) > 1:
                tops = top_nontarget(grad.cosines, targets[keep], classifier.class_ids)
                sampled = set(classifier.class_ids)
                for target, top in zip(labels[keep], tops):
                    self.doppelgangers.update(int(target), sampled, int(top))

        evaluate = self.config.eval_interval and step % self.config.eval_interval == 0
        record = StepRecord(
            step=step,
            loss=loss,
            occupancy=self.system.occupancy,
            evictions=self.system.evictions,
            refreshes=self.system.refreshes,
            eval_accuracy=nearest_center_accuracy(self.encoder, self.dataset) if evaluate else None,
        )
        self.log.append(record)
        return record

    def run(self, steps: int | None = None, callback: Callable[[Trainer, StepRecord], None] | None = None) -> list[StepRecord]:
        for _ in range(self.config.steps if steps is None else steps):
            record = self.step()
            if callback is not None:
                callback(self, record)
        return self.log


def train(
    dataset: SyntheticDataset,
    config: TrainConfig,
    pm: PMConfig,
    teacher: LinearEncoder | None = None,
    callback=None,
) -> tuple[list[StepRecord], Trainer]:
    trainer = Trainer(dataset, config, pm, teacher=teacher)
    return trainer.run(callback=callback), trainer


def write_log(path, records: Iterable[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for record in records:
            writer.writerow(record.row())
