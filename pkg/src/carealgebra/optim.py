"""Adam and the minibatch training loop with early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ConfigurationError, DegenerateBatchError, ShapeError, UndefinedMetricError, ValidationError
from .metrics import auc

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigurationError("lr must be nonnegative")


def adam_step(state, params, grads=None):
    """One bias-corrected Adam update, in place on ``params``.

    ``grads`` defaults to each parameter's accumulated ``.grad``.
    """
    params = list(params)
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise ShapeError("one gradient per parameter is required")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("Adam state was created for a different parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.name!r} {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_grad_norm(params, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the old norm."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if math.isfinite(max_norm) and total > max_norm:
        f = max_norm / total
        for p in params:
            p.grad *= f
    return total


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    patience: int = 5
    lr: float = 0.01
    clip: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if not self.clip > 0:
            raise ConfigurationError("clip must be positive (use inf to disable)")

    def to_dict(self):
        return asdict(self)


def _validation_auc(model, records):
    if not records:
        return None
    try:
        return auc(model.score_visits(records))
    except UndefinedMetricError:
        return None


def train(model, train_records, val_records=(), cfg=TrainConfig(), progress=None):
    """Fit ``model`` with Adam over shuffled minibatches of patient records.

    The model must provide ``parameters()``, ``batch_loss(records, epoch)``
    and ``score_visits(records)``.  When validation AUC is available the
    best epoch's parameters are restored at the end and training stops
    after ``cfg.patience`` epochs without improvement.

    Returns ``(model, history)`` where history holds one dict per epoch.
    """
    records = list(train_records)
    val_records = list(val_records)
    if not records:
        raise ValidationError("training cohort is empty")
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    history = []
    best_auc, best_values, stale = -math.inf, None, 0

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(len(records))
        losses, weights = [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [records[i] for i in order[start:start + cfg.batch_size]]
            for p in params:
                p.zero_grad()
            try:
                with dc.GradProgram() as prog:
                    out = model.batch_loss(batch, epoch=epoch)
            except DegenerateBatchError:
                continue
            prog.backward(out)
            clip_grad_norm(params, cfg.clip)
            adam_step(state, params)
            losses.append(float(out.value))
            weights.append(len(batch))
        if not losses:
            raise DegenerateBatchError("no minibatch in the training cohort has a labeled visit")
        train_loss = float(np.average(losses, weights=weights))
        val_auc = _validation_auc(model, val_records)
        history.append({"epoch": epoch + 1, "train_loss": train_loss, "val_auc": val_auc})
        if progress:
            progress(history[-1])
        log.debug("epoch %d loss %.5f val_auc %s", epoch + 1, train_loss, val_auc)
        if val_auc is None:
            continue
        if val_auc > best_auc:
            best_auc, stale = val_auc, 0
            best_values = [p.value.copy() for p in params]
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    return model, history
