"""Optimizers, initialization and the plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, NonFiniteGradientError
from .tensor import Tensor


def he_init_scaled(
    shape: tuple[int, ...],
    fan_in: int,
    dropout_rate: float | None,
    rng: np.random.Generator,
    dtype=np.float64,
) -> np.ndarray:
    """He-normal sample multiplied by ``sqrt(dropout_rate)``.

    Pass ``dropout_rate=None`` for layers without dropout (factor 1).
    """
    if fan_in < 1:
        raise ConfigError(f"fan_in must be >= 1, got {fan_in}")
    factor = 1.0
    if dropout_rate is not None:
        if not 0.0 < dropout_rate <= 1.0:
            raise ConfigError(f"dropout rate for init scaling must lie in (0, 1], got {dropout_rate}")
        factor = math.sqrt(dropout_rate)
    std = math.sqrt(2.0 / fan_in) * factor
    return (rng.standard_normal(shape) * std).astype(dtype)


class Optimizer:
    """Shared bookkeeping: parameter list, L2 term, learning-rate multiplier."""

    def __init__(self, params: Iterable[Tensor], lr: float, weight_decay: float):
        self.params = [p for p in params if p.requires_grad]
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_multiplier = 1.0
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _gradients(self) -> list[np.ndarray | None]:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                grads.append(None)
                continue
            if not np.all(np.isfinite(p.grad)):
                label = p.name or f"#{i}"
                raise NonFiniteGradientError(f"non-finite gradient for parameter {label}; step aborted")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        return grads

    def step(self) -> None:
        # validate every gradient before touching any parameter
        grads = self._gradients()
        self.step_count += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is not None:
                self._update(i, p, g)

    def _update(self, i: int, p: Tensor, g: np.ndarray) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    """Bias-corrected Adam with L2 added to the gradient."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        t = self.step_count
        self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
        self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
        m_hat = self.m[i] / (1 - self.beta1**t)
        v_hat = self.v[i] / (1 - self.beta2**t)
        p.data -= (self.lr * self.lr_multiplier) * m_hat / (np.sqrt(v_hat) + self.eps)


class Adadelta(Optimizer):
    """Adadelta; ``lr`` scales the unit-free update (1.0 is the classic form)."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1.0,
        rho: float = 0.9,
        eps: float = 1e-6,
        weight_decay: float = 0.0,
    ):
        super().__init__(params, lr, weight_decay)
        self.rho = rho
        self.eps = eps
        self.square_avg = [np.zeros_like(p.data) for p in self.params]
        self.delta_avg = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        rho, eps = self.rho, self.eps
        self.square_avg[i] = rho * self.square_avg[i] + (1 - rho) * g * g
        delta = np.sqrt(self.delta_avg[i] + eps) / np.sqrt(self.square_avg[i] + eps) * g
        self.delta_avg[i] = rho * self.delta_avg[i] + (1 - rho) * delta * delta
        p.data -= (self.lr * self.lr_multiplier) * delta


@dataclass
class HalvingSchedule:
    """Halve the learning rate after ``trigger`` consecutive non-improvements.

    A loss counts as an improvement only if it is strictly below
    ``best - patience``.
    """

    trigger: int = 5
    patience: float = 1e-3
    best: float = math.inf
    bad_epochs: int = 0
    multiplier: float = 1.0
    halvings: int = 0

    def __post_init__(self):
        if self.trigger < 1:
            raise ConfigError(f"halving trigger must be >= 1, got {self.trigger}")

    def update(self, loss: float) -> float:
        if loss < self.best - self.patience:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.trigger:
                self.multiplier *= 0.5
                self.halvings += 1
                self.bad_epochs = 0
        return self.multiplier


def lr_halving_update(sched: HalvingSchedule, epoch_train_loss: float) -> tuple[float, HalvingSchedule]:
    return sched.update(epoch_train_loss), sched


def make_optimizer(name: str, params, lr: float | None, weight_decay: float) -> Optimizer:
    name = name.lower()
    if name == "adam":
        return Adam(params, lr=lr if lr is not None else 1e-3, weight_decay=weight_decay)
    if name == "adadelta":
        return Adadelta(params, lr=lr if lr is not None else 1.0, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer {name!r} (expected adam or adadelta)")
