"""Adam and plateau-based learning-rate decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              names: Sequence[str] | None = None) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("need one gradient per parameter")
    names = names or [f"param[{i}]" for i in range(len(params))]
    for name, p, g in zip(names, params, grads):
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(g)} does not match {name} {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Adam over a list of parameter tensors; missing gradients count as zero."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, names: Sequence[str] | None = None):
        self.params = list(params)
        self.names = list(names) if names else [p.name or f"param[{i}]" for i, p in enumerate(self.params)]
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.state, [p.data for p in self.params], grads, self.names)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` once the best loss has not
    improved by more than ``min_delta`` for ``patience`` consecutive epochs.

    The stall counter resets after each decay.
    """

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.5,
                 min_delta: float = 1e-4, min_lr: float = 0.0):
        if patience < 1:
            raise ValueError("patience must be a positive integer")
        if not 0 < factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = math.inf
        self.num_bad = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr


def reduce_lr_on_plateau(history: Sequence[float], lr: float = 1e-3, patience: int = 10,
                         factor: float = 0.5, min_delta: float = 1e-4) -> float:
    """Learning rate after replaying a validation-loss history epoch by epoch."""
    sched = ReduceLROnPlateau(lr, patience=patience, factor=factor, min_delta=min_delta)
    for loss in history:
        sched.step(loss)
    return sched.lr
