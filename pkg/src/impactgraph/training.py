"""Transductive full-batch training and regression metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffengine as de
from .dataset import TARGETS
from .exceptions import EmptyMask, MissingTarget, NonFiniteLoss, ValidationError, ZeroVariance
from .models import ModelInstance


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 200
    target: str | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.max_epochs) < 1:
            raise ValidationError("max_epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if int(self.patience) < 1:
            raise ValidationError("patience must be >= 1")
        if self.target is not None and self.target not in TARGETS:
            raise ValidationError(f"unknown target {self.target!r}; choose from {', '.join(TARGETS)}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class Adam:
    """Adam over a :class:`ParamStore`, updating values in place."""

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = float("inf")
    stopped_early: bool = False


def train(instance: ModelInstance, target: np.ndarray, train_mask: np.ndarray, config: TrainConfig) -> TrainResult:
    """Minimise the masked MSE with Adam; leave best-loss parameters in place.

    All nodes take part in every forward pass; only ``train_mask`` rows
    contribute to the loss.
    """
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    train_mask = np.asarray(train_mask, dtype=bool).reshape(-1)
    if not train_mask.any():
        raise EmptyMask("training mask is empty")
    if np.any(~np.isfinite(target[train_mask])):
        raise MissingTarget(f"target {config.target!r} is missing on training rows")
    target = np.where(train_mask, target, 0.0)[:, None]

    params = instance.params
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    result = TrainResult()
    best_values = params.values_copy()

    def loss_fn(ps):
        return de.masked_mse(instance.forward(), target, train_mask)

    for epoch in range(int(config.max_epochs)):
        # Divergence surfaces as NonFiniteLoss below, not as numpy warnings.
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = de.value_and_grad(loss_fn, params)
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, loss)
        result.history.append(loss)
        if loss < result.best_loss:
            result.best_loss, result.best_epoch = loss, epoch
            best_values = params.values_copy()
        elif epoch - result.best_epoch >= config.patience:
            result.stopped_early = True
            break
        opt.step(grads)
    params.load_values(best_values)
    return result


def write_history(history, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(float(loss))])


def _masked(y, y_hat, mask):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ValidationError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        y, y_hat = y[mask], y_hat[mask]
    if y.size == 0:
        raise EmptyMask("mask selects no rows")
    return y, y_hat


def mse(y, y_hat, mask=None) -> float:
    y, y_hat = _masked(y, y_hat, mask)
    return float(np.mean((y - y_hat) ** 2))


masked_mse = mse


def mae(y, y_hat, mask=None) -> float:
    y, y_hat = _masked(y, y_hat, mask)
    return float(np.mean(np.abs(y - y_hat)))


def r_squared(y, y_hat, mask=None) -> float:
    y, y_hat = _masked(y, y_hat, mask)
    if y.size < 2:
        raise ZeroVariance("R^2 needs at least two rows")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("target has zero variance over the mask")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def regression_metrics(y, y_hat, mask=None) -> dict:
    return {"mse": mse(y, y_hat, mask), "mae": mae(y, y_hat, mask), "r2": r_squared(y, y_hat, mask)}
