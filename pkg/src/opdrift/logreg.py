"""Logistic-regression baseline on relative opcode-frequency features.

Full-batch gradient descent on L2-regularized cross-entropy. Per-window
datasets are small, so batch descent keeps training deterministic without
any minibatch bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EncodedSample


class LogRegError(ValueError):
    """Raised for empty classes and dimension mismatches."""


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray  # (M,)
    bias: float

    def save(self, path: Path | str) -> None:
        """Text persistence: `LOGREG M`, weight row, bias line."""
        lines = [
            f"LOGREG {len(self.weights)}",
            " ".join(f"{x:.17g}" for x in self.weights),
            f"{self.bias:.17g}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "LogRegModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tag, m = lines[0].split()
        if tag != "LOGREG":
            raise LogRegError(f"{path}: not a logistic regression model file")
        weights = np.array([float(x) for x in lines[1].split()])
        if len(weights) != int(m):
            raise LogRegError(f"{path}: expected {m} weights, found {len(weights)}")
        return cls(weights=weights, bias=float(lines[2]))


@dataclass(frozen=True)
class LogRegConfig:
    epochs: int = 500
    learning_rate: float = 0.1
    l2: float = 1e-4
    seed: int = 0
    include_bias_in_distance: bool = False


def sigmoid(x):
    """1 / (1 + exp(-x)), computed stably for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def featurize(sample: EncodedSample, vocab_size: int) -> np.ndarray:
    """Relative opcode frequencies: entry i = count(i) / sequence length."""
    if len(sample) == 0:
        raise LogRegError(f"sample {sample.sample_id!r} is empty")
    counts = np.bincount(sample.indices, minlength=vocab_size).astype(float)
    return counts / len(sample)


def _loss_and_grad(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy + (l2/2)||w||^2 and its gradient (bias unpenalized)."""
    z = x @ w + b
    p = sigmoid(z)
    eps = 1e-12
    loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    loss += 0.5 * l2 * float(w @ w)
    resid = p - y
    grad_w = x.T @ resid / len(y) + l2 * w
    grad_b = float(np.mean(resid))
    return loss, grad_w, grad_b


def train_logreg(
    pos: list[np.ndarray],
    neg: list[np.ndarray],
    epochs: int = 500,
    learning_rate: float = 0.1,
    l2: float = 1e-4,
    seed: int = 0,
) -> LogRegModel:
    """Fit weights separating `pos` (label 1) from `neg` (label 0).

    Weights start at zero, so the convex objective makes the result
    independent of `seed`; the parameter is accepted for interface stability.
    """
    if not pos or not neg:
        raise LogRegError("both classes must be non-empty")
    x = np.vstack(pos + neg)
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        _, grad_w, grad_b = _loss_and_grad(w, b, x, y, l2)
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b
    return LogRegModel(weights=w, bias=b)


def predict(model: LogRegModel, x: np.ndarray) -> np.ndarray:
    """Hard labels at the 0.5 threshold: 1 iff w.x + b > 0."""
    return (np.asarray(x) @ model.weights + model.bias > 0).astype(int)


def weight_distance(m1: LogRegModel, m2: LogRegModel, include_bias: bool = False) -> float:
    """Euclidean distance between weight vectors; bias excluded by default."""
    if len(m1.weights) != len(m2.weights):
        raise LogRegError(f"weight lengths differ: {len(m1.weights)} vs {len(m2.weights)}")
    d2 = float(np.sum((m1.weights - m2.weights) ** 2))
    if include_bias:
        d2 += (m1.bias - m2.bias) ** 2
    return float(np.sqrt(d2))
