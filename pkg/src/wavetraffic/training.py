"""Normalization, chronological splits, sliding windows, and the
training loop (Huber loss + Adam, seeded shuffling, best-validation
checkpointing).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError, TrainingError
from .model import Model
from .optim import AdamState, adam_step

__all__ = [
    "NormalizationStats",
    "SplitSpec",
    "WindowSpec",
    "TrainConfig",
    "compute_stats",
    "normalize",
    "denormalize",
    "split",
    "make_windows",
    "fit",
    "FitResult",
]


@dataclass
class NormalizationStats:
    """Per-node mean and population standard deviation from the training split."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f <= 0 for f in fracs):
            raise ParameterError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ParameterError(f"split fractions must sum to 1, got {sum(fracs)}")


@dataclass
class WindowSpec:
    input_length: int = 12
    horizon: int = 12
    stride: int = 1

    def __post_init__(self):
        if self.input_length < 1 or self.horizon < 1 or self.stride < 1:
            raise ParameterError("window lengths and stride must be positive")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    batch_size: int = 32
    huber_delta: float = 1.0
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0 or self.batch_size < 1 or self.huber_delta <= 0:
            raise ParameterError("invalid training configuration")


def compute_stats(train_x) -> NormalizationStats:
    """Stats over the time axis of a (N, ..., M_train) array; never pass
    validation or test data here."""
    x = np.asarray(train_x, dtype=np.float64)
    axes = tuple(range(1, x.ndim))
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)  # population convention
    low = std < 1e-8
    if np.any(low):
        warnings.warn(
            f"{int(low.sum())} node(s) have near-zero variance; std clamped to 1",
            stacklevel=2,
        )
        std = np.where(low, 1.0, std)
    return NormalizationStats(mean=mean, std=std)


def _node_shape(stats: NormalizationStats, ndim: int):
    return (-1,) + (1,) * (ndim - 1)


def normalize(x, stats: NormalizationStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shape = _node_shape(stats, x.ndim)
    return (x - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def denormalize(x_norm, stats: NormalizationStats) -> np.ndarray:
    x = np.asarray(x_norm, dtype=np.float64)
    shape = _node_shape(stats, x.ndim)
    return x * stats.std.reshape(shape) + stats.mean.reshape(shape)


def split(x, spec: SplitSpec = SplitSpec()):
    """Chronological (train, val, test) partition along the last axis.

    Train/val take their floor allocations; the remainder goes to test.
    """
    x = np.asarray(x)
    m = x.shape[-1]
    n_train = int(np.floor(spec.train * m))
    n_val = int(np.floor(spec.val * m))
    n_test = m - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DimensionError(f"series of length {m} too short for split {spec}")
    return (
        x[..., :n_train],
        x[..., n_train : n_train + n_val],
        x[..., n_train + n_val :],
    )


def make_windows(x, spec: WindowSpec = WindowSpec()):
    """Sliding (input, target) pairs from a (N, c, M_seg) segment.

    Inputs are (W, N, c, L_in); targets (W, N, horizon) taken from
    channel 0 starting right at each input's end.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    n, c, m = x.shape
    total = spec.input_length + spec.horizon
    if m < total:
        raise DimensionError(
            f"segment length {m} shorter than input+horizon = {total}"
        )
    starts = range(0, m - total + 1, spec.stride)
    inputs = np.stack([x[:, :, s : s + spec.input_length] for s in starts])
    targets = np.stack(
        [x[:, 0, s + spec.input_length : s + total] for s in starts]
    )
    return inputs, targets


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)


def _mean_abs_error(model: Model, inputs, targets, batch_size: int) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(inputs), batch_size):
        pred = model.predict(inputs[lo : lo + batch_size])
        t = targets[lo : lo + batch_size]
        total += np.abs(pred - t).sum()
        count += t.size
    return total / count


def fit(model: Model, train_windows, val_windows, cfg: TrainConfig = TrainConfig()) -> FitResult:
    """Adam over seeded shuffled batches; retains the best-validation state.

    ``train_windows`` / ``val_windows`` are (inputs, targets) pairs from
    :func:`make_windows` built on normalized data.
    """
    tr_x, tr_y = train_windows
    va_x, va_y = val_windows
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    best_val = np.inf
    best_state = model.graph.state()
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tr_x))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            model.graph.zero_grad()
            pred = model.forward(tr_x[idx])
            loss = T.huber_loss(pred, tr_y[idx], cfg.huber_delta)
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}, batch {n_batches}"
                )
            grads = model.graph.backward(loss)
            updated = adam_step(model.graph.state(), grads, state)
            model.graph.load_state(updated)
            epoch_loss += loss.item()
            n_batches += 1
        val_loss, val_count = 0.0, 0
        for lo in range(0, len(va_x), cfg.batch_size):
            pred = model.predict(va_x[lo : lo + cfg.batch_size])
            chunk = va_y[lo : lo + cfg.batch_size]
            val_loss += _huber_value(pred - chunk, cfg.huber_delta).sum()
            val_count += chunk.size
        val_loss /= max(val_count, 1)
        val_mae = _mean_abs_error(model, va_x, va_y, cfg.batch_size)
        log.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "val_loss": val_loss,
            "val_mae": val_mae,
            "wall_seconds": time.perf_counter() - t0,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.graph.state()
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best > cfg.patience:
                break
    return FitResult(best_state=best_state, final_state=model.graph.state(), log=log)


def _huber_value(err: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))
