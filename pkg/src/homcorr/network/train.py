"""Minibatch training with softmax cross-entropy and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import Model
from .optim import AdamState, adam_step


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    adam: AdamState | None = None
    rng_state: dict | None = None
    losses: list = field(default_factory=list)


def loss_and_grad(model: Model, x: np.ndarray, y: np.ndarray, train: bool = True):
    """Mean cross-entropy on ``(x, y)`` and its flat parameter gradient."""
    params = model.parameters()
    ad.zero_grad(params)
    loss = ad.cross_entropy(model.forward(x, train=train), y)
    loss.backward()
    return loss.item(), model.grads_flat()


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == np.asarray(y)))


def train(model: Model, x: np.ndarray, y: np.ndarray, epochs: int, batch_size: int = 32,
          lr: float = 5e-3, seed: int = 0, adam: AdamState | None = None, log=None,
          eval_data=None) -> TrainResult:
    """Train in place.  Deterministic given ``seed`` and the initial parameters."""
    rng = np.random.default_rng(seed)
    adam = adam or AdamState.zeros(model.n_params)
    res = TrainResult()
    n = len(y)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, g = loss_and_grad(model, x[idx], y[idx])
            flat, adam = adam_step(model.get_flat(), g, adam, lr)
            model.set_flat(flat)
            res.losses.append(loss)
            total += loss * len(idx)
        row = {"epoch": epoch + 1, "loss": total / max(n, 1), "train_acc": accuracy(model, x, y)}
        if eval_data is not None:
            row["test_acc"] = accuracy(model, *eval_data)
        res.history.append(row)
        if log is not None:
            log(row)
    res.adam, res.rng_state = adam, rng.bit_generator.state
    return res
