"""Linear encoder ``x -> normalize(W^T x)`` with its exact backward pass."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .core import normalize_rows
from .memory import _read_exact

_SHAPE = struct.Struct("<QQ")


class LinearEncoder:
    def __init__(self, weight: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ValueError("weight must be a (D_in, D) matrix")
        if not np.all(np.isfinite(weight)):
            raise ValueError("weight must be finite")
        self.weight = weight.copy()

    @classmethod
    def random(cls, dim_in: int, dim: int, rng: np.random.Generator) -> LinearEncoder:
        return cls(rng.standard_normal((dim_in, dim)) / np.sqrt(dim_in))

    @property
    def dim_in(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def raw(self, inputs) -> np.ndarray:
        return np.asarray(inputs, dtype=np.float64) @ self.weight

    def __call__(self, inputs) -> np.ndarray:
        return normalize_rows(self.raw(inputs))

    def grad_from_raw(self, inputs, d_raw) -> np.ndarray:
        """Weight gradient given gradients with respect to the raw outputs ``W^T x``."""
        return np.asarray(inputs, dtype=np.float64).T @ np.asarray(d_raw, dtype=np.float64)

    def sgd_step(self, grad: np.ndarray, learning_rate: float) -> None:
        self.weight -= learning_rate * grad

    def write(self, fh: BinaryIO) -> None:
        fh.write(_SHAPE.pack(*self.weight.shape))
        fh.write(self.weight.astype("<f8").tobytes())

    @classmethod
    def read(cls, fh: BinaryIO) -> LinearEncoder:
        rows, cols = _SHAPE.unpack(_read_exact(fh, _SHAPE.size))
        data = _read_exact(fh, 8 * rows * cols)
        return cls(np.frombuffer(data, dtype="<f8").reshape(rows, cols))

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path: str | Path) -> LinearEncoder:
        with open(path, "rb") as fh:
            return cls.read(fh)


def encoder_forward(encoder: LinearEncoder, inputs) -> np.ndarray:
    return encoder(inputs)


def normalization_backward(raw: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Pull gradients on ``raw / ||raw||`` back to ``raw``: ``(I - u u^T) g / ||raw||``."""
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    unit = raw / norms
    return (d_unit - np.sum(d_unit * unit, axis=1, keepdims=True) * unit) / norms


def encoder_backward(encoder: LinearEncoder, inputs, d_embeddings) -> np.ndarray:
    """Weight gradient given gradients with respect to the normalized embeddings."""
    raw = encoder.raw(inputs)
    return encoder.grad_from_raw(inputs, normalization_backward(raw, np.asarray(d_embeddings, dtype=np.float64)))
