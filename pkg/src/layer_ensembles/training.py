"""Mini-batch training of the multi-head network."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data.synthetic import Sample
from .data.transforms import augment, normalize
from .model.losses import multi_head_loss, one_hot
from .model.network import LayerEnsembleNet
from .nn import Adam, ReduceLROnPlateau, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    lr_factor: float = 0.5
    patience: int = 5
    min_delta: float = 1e-4
    augment: bool = True
    seed: int = 0
    time_budget: float = 0.0  # seconds; 0 disables


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    best_state: dict[str, np.ndarray] = field(default_factory=dict)


def _batch(samples: Sequence[Sample], num_classes: int) -> tuple[Tensor, np.ndarray]:
    images = np.stack([normalize(s.image) for s in samples])
    target = one_hot(np.stack([s.mask for s in samples]), num_classes)
    return Tensor(images), target


def evaluate_loss(net: LayerEnsembleNet, samples: Sequence[Sample], batch_size: int = 16) -> float:
    cfg = net.config
    net.eval()
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, t = _batch(chunk, cfg.out_channels)
            loss = multi_head_loss(net(x), t, cfg.loss, cfg.ce_weights)
            total += loss.item() * len(chunk)
    net.train()
    return total / max(len(samples), 1)


def train(net: LayerEnsembleNet, train_set: Sequence[Sample], val_set: Sequence[Sample],
          cfg: TrainConfig, on_epoch: Callable[[EpochLog], None] | None = None,
          clock: Callable[[], float] | None = None) -> TrainResult:
    """Adam on the mean head loss; keeps the weights with the best validation loss.

    ``time_budget`` (when positive) stops training after the first epoch
    that ends past the budget, measured with ``clock``.
    """
    mcfg = net.config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    names = [n for n, _ in net.named_parameters()]
    opt = Adam(net.parameters(), lr=cfg.lr, names=names)
    sched = ReduceLROnPlateau(cfg.lr, patience=cfg.patience, factor=cfg.lr_factor, min_delta=cfg.min_delta)
    result = TrainResult()
    start = clock() if clock else 0.0
    net.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        running = 0.0
        for i in range(0, len(order), cfg.batch_size):
            chunk = [train_set[j] for j in order[i:i + cfg.batch_size]]
            if cfg.augment:
                chunk = [augment(s, rng) for s in chunk]
            x, t = _batch(chunk, mcfg.out_channels)
            loss = multi_head_loss(net(x), t, mcfg.loss, mcfg.ce_weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(chunk)
        train_loss = running / max(len(train_set), 1)
        val_loss = evaluate_loss(net, val_set) if val_set else train_loss
        entry = EpochLog(epoch, train_loss, val_loss, opt.lr)
        result.history.append(entry)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.best_state = {k: v.copy() for k, v in net.state_dict().items()}
        opt.lr = sched.step(val_loss)
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, train_loss, val_loss, entry.lr)
        if on_epoch:
            on_epoch(entry)
        if cfg.time_budget > 0 and clock and clock() - start > cfg.time_budget:
            log.info("time budget reached after epoch %d", epoch)
            break
    if result.best_state:
        net.load_state_dict(result.best_state)
    net.eval()
    return result
