"""Losses, optimizers and the minibatch training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .network import Network


class TrainingTimeout(TimeoutError):
    """Training overran its deadline."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""


LOSSES = ("mse", "mae", "quantile")


def loss_value(kind: str, pred: np.ndarray, target: np.ndarray, q: float = 0.75) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    if kind == "mse":
        return float(np.mean(diff * diff))
    if kind == "mae":
        return float(np.mean(np.abs(diff)))
    if kind == "quantile":
        u = -diff
        return float(np.mean(np.where(u >= 0, q * u, (q - 1.0) * u)))
    raise ValueError(f"unknown loss {kind!r}")


def loss_grad(kind: str, pred: np.ndarray, target: np.ndarray, q: float = 0.75) -> np.ndarray:
    diff = pred - target
    n = diff.size
    if kind == "mse":
        return 2.0 * diff / n
    if kind == "mae":
        return np.sign(diff) / n
    if kind == "quantile":
        # u = t - p ; dL/dp = -q for u >= 0, (1 - q) otherwise
        return np.where(diff <= 0, -q, 1.0 - q) / n
    raise ValueError(f"unknown loss {kind!r}")


def loss(kind: str, predictions: np.ndarray, targets: np.ndarray, q: float = 0.75) -> float:
    return loss_value(kind, predictions, targets, q)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "adam"
    loss: str = "mse"
    quantile: float = 0.75
    shuffle_seed: int = 0
    deadline: float | None = None  # absolute time.monotonic() value

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile q must lie in (0, 1)")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        if len(self.x_train) != len(self.y_train) or len(self.x_val) != len(self.y_val):
            raise ValueError("inputs and targets must have equal lengths")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def final_val_loss(self) -> float:
        return self.val_loss[-1]


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] *= self.b1
                m[k] += (1.0 - self.b1) * g[k]
                v[k] *= self.b2
                v[k] += (1.0 - self.b2) * g[k] * g[k]
                p[k] -= self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            for k in p:
                p[k] -= self.lr * g[k]


def predict(net: Network, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    return np.concatenate([net.forward(x[s : s + chunk]) for s in range(0, len(x), chunk)])


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, kind: str, q: float = 0.75) -> float:
    return loss_value(kind, predict(net, x), y, q)


def train(net: Network, data: Dataset, cfg: TrainConfig) -> History:
    """Minibatch training in place; returns per-epoch train/validation losses.

    Raises :class:`DivergenceError` as soon as a loss becomes non-finite and
    :class:`TrainingTimeout` once ``cfg.deadline`` has passed (checked per batch).
    """
    n = len(data.x_train)
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {n}")
    params = net.parameters()
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    hist = History()
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(n)
            total = 0.0
            for s in range(0, n, cfg.batch_size):
                idx = order[s : s + cfg.batch_size]
                xb, yb = data.x_train[idx], data.y_train[idx]
                pred = net.forward(xb, keep_cache=True)
                batch_loss = loss_value(cfg.loss, pred, yb, cfg.quantile)
                if not np.isfinite(batch_loss):
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}")
                total += batch_loss * len(idx)
                grads = net.backward(loss_grad(cfg.loss, pred, yb, cfg.quantile))
                opt.step(params, grads)
                if cfg.deadline is not None and time.monotonic() > cfg.deadline:
                    raise TrainingTimeout(f"training exceeded its time limit at epoch {epoch}")
            val = evaluate(net, data.x_val, data.y_val, cfg.loss, cfg.quantile) if len(data.x_val) else float("nan")
            if len(data.x_val) and not np.isfinite(val):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
            hist.train_loss.append(total / n)
            hist.val_loss.append(val)
    return hist
