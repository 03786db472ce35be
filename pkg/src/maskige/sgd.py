"""Minibatch SGD on softmax cross-entropy, shared by every trainable head.

Two architectures: a plain linear map from features to class scores, and a
one-hidden-layer tanh network.  Gradients are analytic; the loss/gradient
functions are exposed separately so tests can check them against central
finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ArtifactError


@dataclass
class FitReport:
    """Loss before training plus the mean loss after each epoch."""

    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    gradient_steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def linear_loss(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    probs = softmax(x @ weights)
    p = probs[np.arange(y.size), y]
    return float(-np.log(np.maximum(p, 1e-300)).mean())


def linear_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs = softmax(x @ weights)
    probs[np.arange(y.size), y] -= 1.0
    return x.T @ probs / y.size


def mlp_loss(w1: np.ndarray, w2: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    hidden = np.tanh(x @ w1)
    h1 = np.concatenate([hidden, np.ones((hidden.shape[0], 1))], axis=1)
    probs = softmax(h1 @ w2)
    p = probs[np.arange(y.size), y]
    return float(-np.log(np.maximum(p, 1e-300)).mean())


def mlp_grad(w1: np.ndarray, w2: np.ndarray, x: np.ndarray, y: np.ndarray):
    hidden = np.tanh(x @ w1)
    h1 = np.concatenate([hidden, np.ones((hidden.shape[0], 1))], axis=1)
    probs = softmax(h1 @ w2)
    probs[np.arange(y.size), y] -= 1.0
    probs /= y.size
    g2 = h1.T @ probs
    dh = probs @ w2[:-1].T
    dz = dh * (1.0 - hidden**2)
    g1 = x.T @ dz
    return g1, g2


def fit_linear(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch: int = 256,
) -> tuple[np.ndarray, FitReport]:
    """Train a linear softmax classifier from an all-zero start.

    The zero start makes a zero-epoch fit return uniform class scores.
    """
    if x.shape[0] == 0:
        raise ArtifactError("empty_sample_set", "no training rows")
    weights = np.zeros((x.shape[1], n_classes))
    report = FitReport(initial_loss=linear_loss(weights, x, y))
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, order.size, batch):
            idx = order[lo : lo + batch]
            weights -= lr * linear_grad(weights, x[idx], y[idx])
            report.gradient_steps += 1
        report.epoch_losses.append(linear_loss(weights, x, y))
    return weights, report


def fit_mlp(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    hidden: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch: int = 256,
) -> tuple[tuple[np.ndarray, np.ndarray], FitReport]:
    if x.shape[0] == 0:
        raise ArtifactError("empty_sample_set", "no training rows")
    n_feat = x.shape[1]
    w1 = rng.normal(0.0, 1.0 / np.sqrt(n_feat), size=(n_feat, hidden))
    w2 = np.zeros((hidden + 1, n_classes))
    report = FitReport(initial_loss=mlp_loss(w1, w2, x, y))
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, order.size, batch):
            idx = order[lo : lo + batch]
            g1, g2 = mlp_grad(w1, w2, x[idx], y[idx])
            w1 -= lr * g1
            w2 -= lr * g2
            report.gradient_steps += 1
        report.epoch_losses.append(mlp_loss(w1, w2, x, y))
    return (w1, w2), report
