"""Margin softmax losses over a snapshot of prototypes, with analytic gradients.

Both losses take raw (unnormalized) embeddings, normalize them internally and
return gradients with respect to the raw embeddings and to every prototype in
the snapshot. Cosines are clipped to [-1, 1]; clipped entries pass no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LossConfig, ProtomemError, normalize_rows


class MissingTarget(ProtomemError, ValueError):
    """An example's ground-truth class is not in the snapshot."""


@dataclass
class LossGrad:
    loss: float
    d_embedding: np.ndarray
    d_prototypes: np.ndarray
    cosines: np.ndarray

    def prototype_grads(self, class_ids) -> dict[int, np.ndarray]:
        """Gradients keyed by class id, in snapshot order."""
        return {int(c): self.d_prototypes[j] for j, c in enumerate(class_ids)}


def _check_targets(targets, n_rows: int, n_cols: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n_rows,):
        raise ValueError("one target index per row required")
    bad = (targets < 0) | (targets >= n_cols)
    if bad.any():
        raise MissingTarget(f"row {int(np.argmax(bad))} has no target in the snapshot")
    return targets


def _logsumexp(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)))[:, 0]


def cosface_terms(cosines, targets, s: float, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss and d(loss_i)/d(cos_ij) for the large margin cosine loss."""
    cosines = np.asarray(cosines, dtype=np.float64)
    targets = _check_targets(targets, *cosines.shape)
    rows = np.arange(len(targets))
    z = s * cosines
    z[rows, targets] -= s * m
    lse = _logsumexp(z)
    per_row = lse - z[rows, targets]
    probs = np.exp(z - lse[:, None])
    probs[rows, targets] -= 1.0
    return per_row, s * probs


def dsoftmax_terms(cosines, targets, s: float, d: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss and d(loss_i)/d(cos_ij) for D-Softmax.

    intra = log(1 + e^{ds} / e^{s cos_y}) = softplus(s (d - cos_y))
    inter = log(1 + sum_{j != y} e^{s cos_j})
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    targets = _check_targets(targets, *cosines.shape)
    rows = np.arange(len(targets))
    a = s * (d - cosines[rows, targets])
    intra = np.logaddexp(0.0, a)
    # 0 stands for the "1 +" inside the inter-class log
    z = np.concatenate([np.zeros((len(rows), 1)), s * cosines], axis=1)
    z[rows, targets + 1] = -np.inf
    lse = _logsumexp(z)
    inter = lse
    grad = s * np.exp(z[:, 1:] - lse[:, None])
    grad[rows, targets] = -s * np.exp(-np.logaddexp(0.0, -a))
    return intra + inter, grad


def dsoftmax_split(cosines, targets, s: float, d: float) -> tuple[np.ndarray, np.ndarray]:
    """The intra-class and inter-class parts of D-Softmax, per row."""
    cosines = np.asarray(cosines, dtype=np.float64)
    targets = _check_targets(targets, *cosines.shape)
    rows = np.arange(len(targets))
    intra = np.logaddexp(0.0, s * (d - cosines[rows, targets]))
    z = np.concatenate([np.zeros((len(rows), 1)), s * cosines], axis=1)
    z[rows, targets + 1] = -np.inf
    return intra, _logsumexp(z)


def cosface_forward(cosines, targets, s: float, m: float) -> float:
    per_row, _ = cosface_terms(np.clip(cosines, -1.0, 1.0), targets, s, m)
    return float(per_row.mean())


def dsoftmax_forward(cosines, targets, s: float, d: float) -> float:
    per_row, _ = dsoftmax_terms(np.clip(cosines, -1.0, 1.0), targets, s, d)
    return float(per_row.mean())


def _backward(terms, embeddings, prototypes, targets, *params) -> LossGrad:
    raw = np.asarray(embeddings, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    x = normalize_rows(raw)
    cos_raw = x @ prototypes.T
    cosines = np.clip(cos_raw, -1.0, 1.0)
    per_row, g = terms(cosines, targets, *params)
    g = np.where(cos_raw == cosines, g, 0.0) / len(per_row)
    d_x = g @ prototypes
    # chain rule through x = raw / ||raw||: (I - x x^T) / ||raw||
    d_raw = (d_x - np.sum(d_x * x, axis=1, keepdims=True) * x) / norms
    d_proto = g.T @ x
    return LossGrad(float(per_row.mean()), d_raw, d_proto, cosines)


def cosface_backward(embeddings, prototypes, targets, s: float, m: float) -> LossGrad:
    """CosFace loss and gradients for raw embeddings ``(N, D)`` against prototypes ``(M', D)``."""
    return _backward(cosface_terms, embeddings, prototypes, targets, s, m)


def dsoftmax_backward(embeddings, prototypes, targets, s: float, d: float) -> LossGrad:
    return _backward(dsoftmax_terms, embeddings, prototypes, targets, s, d)


def loss_and_grad(config: LossConfig, embeddings, prototypes, targets) -> LossGrad:
    if config.name == "cosface":
        return cosface_backward(embeddings, prototypes, targets, config.s, config.m)
    return dsoftmax_backward(embeddings, prototypes, targets, config.s, config.d)


def loss_value(config: LossConfig, embeddings, prototypes, targets) -> float:
    cosines = normalize_rows(embeddings) @ np.asarray(prototypes, dtype=np.float64).T
    if config.name == "cosface":
        return cosface_forward(cosines, targets, config.s, config.m)
    return dsoftmax_forward(cosines, targets, config.s, config.d)
