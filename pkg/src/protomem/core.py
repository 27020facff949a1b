"""Shared vocabulary: normalization, errors and the memory configuration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

ZERO_NORM = 1e-12


class ProtomemError(Exception):
    """Base class for library errors."""


class ZeroVector(ProtomemError, ArithmeticError):
    """A vector with (numerically) zero norm cannot be put on the sphere."""


class ConfigError(ProtomemError, ValueError):
    pass


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||`` as a float64 array.

    Raises ZeroVector when the norm is below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm >= ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {norm:.3g}")
    return v / norm


def normalize_rows(a) -> np.ndarray:
    """Row-wise ``normalize`` for a 2-D array."""
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if a.size and not np.all(norms >= ZERO_NORM):
        bad = int(np.argmin(norms))
        raise ZeroVector(f"row {bad} has norm {float(norms[bad, 0]):.3g}")
    return a / norms


def random_unit_vectors(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` directions drawn uniformly on the unit sphere in ``dim`` dimensions."""
    return normalize_rows(rng.standard_normal((n, dim)))


def _check_keys(cls, data: dict[str, Any]) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class LossConfig:
    """Margin loss selection: ``cosface`` uses (s, m), ``dsoftmax`` uses (s, d)."""

    name: str = "cosface"
    s: float = 64.0
    m: float = 0.4
    d: float = 0.9

    def __post_init__(self) -> None:
        if self.name not in ("cosface", "dsoftmax"):
            raise ConfigError(f"loss must be 'cosface' or 'dsoftmax', got {self.name!r}")
        if not self.s > 0:
            raise ConfigError("s must be positive")
        if not 0.0 <= self.m < 1.0:
            raise ConfigError("m must lie in [0, 1)")
        if not 0.0 <= self.d < 1.0:
            raise ConfigError("d must lie in [0, 1)")

    @property
    def epsilon(self) -> float:
        return math.exp(self.d * self.s)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LossConfig:
        _check_keys(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class PMConfig:
    D: int = 16
    M: int = 200
    k: int = 4
    r: float = 0.2
    loss: LossConfig = field(default_factory=LossConfig)
    h: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("D", "M", "k", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer")
        if self.D < 1 or self.M < 1:
            raise ConfigError("D and M must be positive")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if not 0.0 <= self.r <= 1.0:
            raise ConfigError("r must lie in [0, 1]")
        if not 0.0 <= self.h <= 1.0:
            raise ConfigError("h must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PMConfig:
        _check_keys(cls, data)
        data = dict(data)
        if "loss" in data:
            if not isinstance(data["loss"], dict):
                raise ConfigError("loss must be an object")
            data["loss"] = LossConfig.from_dict(data["loss"])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> PMConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
