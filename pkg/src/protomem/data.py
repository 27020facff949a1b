"""Synthetic clustered data on the unit sphere and its on-disk manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import normalize_rows, random_unit_vectors

MANIFEST = "manifest.json"
EXAMPLES = "examples.bin"
DIRECTIONS = "directions.bin"
HELD_OUT = "held_out.bin"


@dataclass
class SyntheticDataset:
    """Examples ``normalize(mu_c + sigma * n)`` around per-class directions ``mu_c``.

    ``class_examples[c]`` lists the example ids of class ``c``; ``labels`` maps
    each example id back to its class.
    """

    directions: np.ndarray
    examples: np.ndarray
    labels: np.ndarray
    sigma: float
    held_out: np.ndarray | None = None
    held_out_labels: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
        self.class_examples = [order[bounds[c] : bounds[c + 1]] for c in range(self.num_classes)]

    @property
    def num_classes(self) -> int:
        return len(self.directions)

    @property
    def dim_in(self) -> int:
        return self.directions.shape[1]

    def __len__(self) -> int:
        return len(self.examples)

    def class_counts(self) -> np.ndarray:
        return np.array([len(ids) for ids in self.class_examples])

    def to_dir(self, path: str | Path) -> None:
        """Write ``manifest.json`` plus little-endian float64 vector files."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "num_classes": self.num_classes,
            "dim_in": self.dim_in,
            "sigma": self.sigma,
            "seed": self.seed,
            "num_examples": len(self),
            "num_held_out": 0 if self.held_out is None else len(self.held_out),
            "classes": [
                {"class_id": c, "count": len(ids), "example_ids": ids.tolist()}
                for c, ids in enumerate(self.class_examples)
            ],
        }
        if self.held_out is not None:
            manifest["held_out_labels"] = self.held_out_labels.tolist()
        (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        (path / EXAMPLES).write_bytes(self.examples.astype("<f8").tobytes())
        (path / DIRECTIONS).write_bytes(self.directions.astype("<f8").tobytes())
        if self.held_out is not None:
            (path / HELD_OUT).write_bytes(self.held_out.astype("<f8").tobytes())

    @classmethod
    def from_dir(cls, path: str | Path) -> SyntheticDataset:
        path = Path(path)
        manifest = json.loads((path / MANIFEST).read_text())
        dim = manifest["dim_in"]

        def load(name: str) -> np.ndarray:
            return np.frombuffer((path / name).read_bytes(), dtype="<f8").reshape(-1, dim).astype(np.float64)

        labels = np.empty(manifest["num_examples"], dtype=np.int64)
        for entry in manifest["classes"]:
            labels[entry["example_ids"]] = entry["class_id"]
        held_out = held_out_labels = None
        if manifest["num_held_out"]:
            held_out = load(HELD_OUT)
            held_out_labels = np.asarray(manifest["held_out_labels"], dtype=np.int64)
        return cls(
            directions=load(DIRECTIONS),
            examples=load(EXAMPLES),
            labels=labels,
            sigma=manifest["sigma"],
            held_out=held_out,
            held_out_labels=held_out_labels,
            seed=manifest["seed"],
        )


def _noisy(directions: np.ndarray, labels: np.ndarray, sigma: float, rng) -> np.ndarray:
    noise = rng.standard_normal((len(labels), directions.shape[1]))
    return normalize_rows(directions[labels] + sigma * noise)


def generate_dataset(
    num_classes: int,
    per_class: int,
    dim_in: int,
    sigma: float,
    seed: int,
    held_out_per_class: int = 0,
) -> SyntheticDataset:
    """Deterministic clustered dataset; examples are ordered class by class."""
    if num_classes < 1 or per_class < 1 or dim_in < 1:
        raise ValueError("num_classes, per_class and dim_in must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    directions = random_unit_vectors(num_classes, dim_in, rng)
    labels = np.repeat(np.arange(num_classes), per_class)
    examples = _noisy(directions, labels, sigma, rng)
    held_out = held_out_labels = None
    if held_out_per_class:
        held_out_labels = np.repeat(np.arange(num_classes), held_out_per_class)
        held_out = _noisy(directions, held_out_labels, sigma, rng)
    return SyntheticDataset(directions, examples, labels, float(sigma), held_out, held_out_labels, seed)
