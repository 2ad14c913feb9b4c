"""Shared epoch loop with validation-based early stopping."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_epoch: int = 30
    valid_patience: int = 5
    lr: float = 0.5
    lr_decay: float = 0.5
    clip: float = 5.0
    seed: int = 0
    valid_k: int = 1

    def __post_init__(self):
        if self.n_epoch < 1:
            raise ValueError("n_epoch must be >= 1")
        if self.valid_patience < 1:
            raise ValueError("valid_patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def fit_loop(
    n_items: int,
    step: Callable[[int, float], float],
    validate: Callable[[], float],
    state: Callable[[], dict],
    restore: Callable[[dict], None],
    *,
    n_epoch: int,
    valid_patience: int,
    lr: float,
    lr_decay: float,
    rng: np.random.Generator,
) -> list[dict]:
    """Run epochs over ``n_items`` in seeded shuffled order.

    ``step(i, lr)`` trains on item ``i`` and returns its loss. After each epoch
    ``validate()`` is consulted; the best parameters (``state()``) are restored
    at the end. The learning rate is multiplied by ``lr_decay`` after every
    epoch that fails to improve the validation metric.
    """
    if n_items == 0:
        raise ValueError("empty training set")
    history = []
    best_metric, best_state, best_epoch = -np.inf, None, 0
    since_best = 0
    for epoch in range(1, n_epoch + 1):
        order = rng.permutation(n_items)
        total = 0.0
        for i in order:
            total += step(int(i), lr)
        metric = float(validate())
        history.append(
            {"epoch": epoch, "train_loss": total / n_items, "val_metric": metric, "lr": lr}
        )
        logger.info("epoch %d loss %.4f val %.4f lr %g", epoch, total / n_items, metric, lr)
        if metric > best_metric:
            best_metric, best_state, best_epoch = metric, copy.deepcopy(state()), epoch
            since_best = 0
        else:
            since_best += 1
            lr *= lr_decay
            if since_best >= valid_patience:
                break
    restore(best_state)
    for row in history:
        row["best"] = row["epoch"] == best_epoch
    return history
