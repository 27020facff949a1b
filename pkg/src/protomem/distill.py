"""Prototype generation from a frozen teacher encoder.

The teacher embeds each batch on the fly and its embeddings, not the
student's, feed prototype generation and refresh. Nothing per class is kept
outside the prototype store, so the scheme scales like the store itself.
"""

from __future__ import annotations

import numpy as np

from .core import ConfigError, PMConfig
from .data import SyntheticDataset
from .encoder import LinearEncoder
from .memory import generate_prototype
from .train import Trainer, TrainConfig


def teacher_embed(teacher: LinearEncoder, inputs) -> np.ndarray:
    return teacher(inputs)


def pmkd_generate(teacher_embeddings) -> np.ndarray:
    return generate_prototype(teacher_embeddings)


def pmkd_trainer(
    dataset: SyntheticDataset,
    config: TrainConfig,
    pm: PMConfig,
    teacher: LinearEncoder,
) -> Trainer:
    if config.system != "pm":
        raise ConfigError("distillation requires the pm system")
    return Trainer(dataset, config, pm, teacher=teacher)


def train_teacher(
    dataset: SyntheticDataset,
    pm: PMConfig,
    steps: int,
    learning_rate: float = 0.1,
    groups_per_batch: int = 8,
) -> LinearEncoder:
    """A teacher is simply a student trained for longer; its weights are copied out."""
    config = TrainConfig(steps=steps, learning_rate=learning_rate, groups_per_batch=groups_per_batch)
    trainer = Trainer(dataset, config, pm)
    trainer.run()
    return LinearEncoder(trainer.encoder.weight)


def steps_to_accuracy(trainer: Trainer, target: float, max_steps: int, eval_interval: int = 10) -> int | None:
    """First evaluated step at which held-out nearest-center accuracy reaches ``target``."""
    from .train import nearest_center_accuracy

    for _ in range(max_steps):
        record = trainer.step()
        if record.step % eval_interval == 0:
            if nearest_center_accuracy(trainer.encoder, trainer.dataset) >= target:
                return record.step
    return None
