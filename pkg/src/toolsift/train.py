#!/usr/bin/env python3
"""
toolsift Train - Losses, the seeded SGD loop and the gradient checker

Every trainable model in toolsift is fit by `sgd_run` against an objective:
a callable taking (params, batch) and returning (loss, grads), where params
and grads are dicts of float64 arrays with matching keys. Objectives must be
pure given their inputs; all randomness lives in the loop's seeded shuffle.
"""
import csv
import math
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel

from .errors import DimensionMismatch, NonFiniteLoss
from .models import EpochLoss, LossReport, TrainConfig

logger = structlog.get_logger(__name__)

BCE_EPS = 1e-12
GRAD_CHECK_H = 1e-5

Params = Dict[str, np.ndarray]
EpochData = Union[Sequence, Callable[[int], Sequence]]


class Objective(Protocol):
    def __call__(self, params: Params, batch: Sequence) -> Tuple[float, Params]:
        ...


class GradCheckReport(BaseModel):
    max_rel_error: float
    n_checked: int
    passed: bool
    tolerance: float
    worst_param: Optional[str] = None
    worst_index: Optional[int] = None


# -------------------------------
# Losses
# -------------------------------
def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce(prob, label, eps: float = BCE_EPS):
    """
    Binary cross-entropy -(y ln p + (1 - y) ln(1 - p)) with p clamped to
    [eps, 1 - eps]. Works elementwise on arrays; returns a float for scalars.
    """
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def triplet_loss(a, p, n, margin: float) -> float:
    """max(0, ||a - p||^2 - ||a - n||^2 + margin)"""
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if a.shape != p.shape or a.shape != n.shape:
        raise DimensionMismatch(a.shape, (p.shape, n.shape), "triplet")
    d_pos = float(np.sum((a - p) ** 2))
    d_neg = float(np.sum((a - n) ** 2))
    return max(0.0, d_pos - d_neg + margin)


# -------------------------------
# SGD
# -------------------------------
def _epoch_items(data: EpochData, epoch: int) -> Sequence:
    return data(epoch) if callable(data) else data


def dataset_loss(objective: Objective, params: Params, items: Sequence, chunk: int) -> Optional[float]:
    """Mean objective loss over `items`, evaluated in chunks weighted by size."""
    if len(items) == 0:
        return None
    total = 0.0
    for start in range(0, len(items), chunk):
        part = items[start:start + chunk]
        loss, _ = objective(params, part)
        total += float(loss) * len(part)
    return total / len(items)


def _grad_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def sgd_run(objective: Objective, params0: Params, data: EpochData, cfg: TrainConfig,
            val_data: Optional[Sequence] = None, name: str = "sgd") -> Tuple[Params, LossReport]:
    """
    Minimize `objective` with plain minibatch SGD.

    Each epoch shuffles the items with a generator seeded once from
    `cfg.seed`, keeps the last partial batch, and applies
    theta <- theta - lr * (grad + l2 * theta). `data` may be a sequence or a
    callable mapping the epoch index to that epoch's items (used when
    samples are redrawn per epoch).

    Args:
        objective: Callable (params, batch) -> (loss, grads)
        params0: Initial parameters; copied, never modified
        data: Training items, or epoch -> items
        cfg: Learning rate, epochs, batch size, l2 and seed
        val_data: Optional items for the per-epoch validation loss
        name: Label used in log events

    Returns:
        Tuple of (trained params, LossReport)

    Raises:
        NonFiniteLoss: If a step produces a NaN/inf loss or gradient
    """
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params0.items()}
    rng = np.random.default_rng(cfg.seed)
    report = LossReport(
        initial_train_loss=dataset_loss(objective, params, _epoch_items(data, 0), cfg.batch_size)
    )

    step = 0
    for epoch in range(cfg.epochs):
        items = _epoch_items(data, epoch)
        order = rng.permutation(len(items))
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            loss, grads = objective(params, batch)
            step += 1
            grad_norm = _grad_norm(grads)
            if not (math.isfinite(loss) and math.isfinite(grad_norm)):
                logger.error("non_finite_step", run=name, step=step, loss=loss, grad_norm=grad_norm)
                raise NonFiniteLoss(step, float(loss), grad_norm)
            if cfg.learning_rate > 0:
                for key, grad in grads.items():
                    params[key] -= cfg.learning_rate * (grad + cfg.l2 * params[key])

        train_loss = dataset_loss(objective, params, items, cfg.batch_size)
        val_loss = dataset_loss(objective, params, val_data, cfg.batch_size) if val_data else None
        if train_loss is not None and not math.isfinite(train_loss):
            raise NonFiniteLoss(step, train_loss)
        report.epochs.append(EpochLoss(
            epoch=epoch + 1,
            train_loss=train_loss if train_loss is not None else float("nan"),
            val_loss=val_loss,
        ))
        logger.info("train_epoch", run=name, epoch=epoch + 1, steps=step,
                    train_loss=train_loss, val_loss=val_loss)

    report.param_norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
    return params, report


def write_loss_csv(report: LossReport, path: str) -> None:
    """Write epoch,train_loss,val_loss rows (val_loss empty when absent)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in report.epochs:
            writer.writerow([
                row.epoch,
                repr(row.train_loss),
                "" if row.val_loss is None else repr(row.val_loss),
            ])


# -------------------------------
# Gradient checking
# -------------------------------
def grad_check(objective: Objective, params: Params, batch: Sequence, tolerance: float = 1e-4,
               h: float = GRAD_CHECK_H, max_coords: int = 64, seed: int = 0) -> GradCheckReport:
    """
    Compare the analytic gradient with central differences.

    Each tensor with more than `max_coords` entries is checked on a seeded
    sample of coordinates. The relative error of a coordinate is
    |g_a - g_f| / max(1, |g_a| + |g_f|).
    """
    rng = np.random.default_rng(seed)
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    _, analytic = objective(work, batch)

    worst = (0.0, None, None)
    n_checked = 0
    for name in sorted(work):
        tensor = work[name]
        flat = tensor.reshape(-1)
        if flat.size <= max_coords:
            coords: List[int] = list(range(flat.size))
        else:
            coords = sorted(int(i) for i in rng.choice(flat.size, size=max_coords, replace=False))
        grad_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + h
            plus, _ = objective(work, batch)
            flat[i] = original - h
            minus, _ = objective(work, batch)
            flat[i] = original
            g_f = (float(plus) - float(minus)) / (2.0 * h)
            g_a = float(grad_flat[i])
            rel = abs(g_a - g_f) / max(1.0, abs(g_a) + abs(g_f))
            n_checked += 1
            if rel > worst[0] or worst[1] is None:
                worst = (rel, name, i)

    report = GradCheckReport(
        max_rel_error=worst[0],
        n_checked=n_checked,
        passed=worst[0] < tolerance,
        tolerance=tolerance,
        worst_param=worst[1],
        worst_index=worst[2],
    )
    logger.debug("grad_check", **report.model_dump())
    return report
