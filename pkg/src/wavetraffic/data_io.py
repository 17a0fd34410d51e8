"""CSV ingestion and output plus the seeded synthetic traffic generator.

All numeric output uses 12 significant digits so save/load round trips
are value-exact at that precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "DatasetDescriptor",
    "load_csv",
    "save_csv",
    "synthetic",
    "synthetic_coupling",
    "save_forecasts",
    "load_forecasts",
    "fmt",
]

DAILY_PERIOD = 288  # 5-minute steps per day


def fmt(x: float) -> str:
    return f"{float(x):.12g}"


@dataclass
class DatasetDescriptor:
    name: str
    nodes: int
    observations: int
    granularity_minutes: int = 5
    time_span: str = ""


def load_csv(path, granularity_minutes: int = 5):
    """Read a sensors-as-columns CSV into a (N, 1, M) tensor.

    The header row holds sensor identifiers; every cell must parse as a
    finite number, and all rows must have the same width.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        width = len(header)
        for r, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {width}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                for c, cell in enumerate(row, start=1):
                    try:
                        float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: non-numeric cell at row {r}, column {c}: {cell!r}"
                        ) from None
                raise
            if not all(np.isfinite(values)):
                c = next(i for i, v in enumerate(values, start=1) if not np.isfinite(v))
                raise DataError(f"{path}: non-finite value at row {r}, column {c}")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no observations")
    data = np.asarray(rows, dtype=np.float64).T[:, None, :]  # (N, 1, M)
    desc = DatasetDescriptor(
        name=path.stem,
        nodes=data.shape[0],
        observations=data.shape[2],
        granularity_minutes=granularity_minutes,
    )
    return data, desc


def save_csv(path, x, header=None):
    """Write a (N, M) or (N, 1, M) tensor as a sensors-as-columns CSV."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, 0, :]
    n = x.shape[0]
    header = header or [f"sensor_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(x.shape[1]):
            writer.writerow([fmt(v) for v in x[:, t]])


def synthetic(n_nodes: int, n_steps: int, seed: int = 0) -> np.ndarray:
    """Seeded synthetic traffic: daily sinusoids, sparse node coupling,
    Gaussian noise, softplus floor for positivity. Shape (N, 1, M).
    """
    if n_nodes < 2:
        raise ParameterError(f"synthetic: need at least 2 nodes, got {n_nodes}")
    if n_steps < 2 * DAILY_PERIOD:
        raise ParameterError(
            f"synthetic: need at least {2 * DAILY_PERIOD} steps (two days), got {n_steps}"
        )
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps)
    phase = rng.uniform(0, DAILY_PERIOD, size=n_nodes)
    amp = rng.uniform(1.5, 3.0, size=n_nodes)
    offset = rng.uniform(4.0, 7.0, size=n_nodes)
    base = (
        offset[:, None]
        + amp[:, None] * np.sin(2 * np.pi * (t[None, :] + phase[:, None]) / DAILY_PERIOD)
    )
    # sparse symmetric coupling graph: each node linked to one random partner
    coupling = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        j = int(rng.integers(n_nodes - 1))
        j = j if j < i else j + 1
        coupling[i, j] = coupling[j, i] = 1.0
    mixed = base + 0.6 * (coupling @ base) / np.maximum(coupling.sum(1, keepdims=True), 1)
    noisy = mixed + rng.normal(scale=0.15, size=mixed.shape)
    positive = np.logaddexp(0.0, 4.0 * noisy) / 4.0  # softplus floor
    return positive[:, None, :]


def synthetic_coupling(n_nodes: int, seed: int = 0) -> np.ndarray:
    """The coupling graph :func:`synthetic` would draw for this seed."""
    rng = np.random.default_rng(seed)
    rng.uniform(0, DAILY_PERIOD, size=n_nodes)
    rng.uniform(1.5, 3.0, size=n_nodes)
    rng.uniform(4.0, 7.0, size=n_nodes)
    coupling = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        j = int(rng.integers(n_nodes - 1))
        j = j if j < i else j + 1
        coupling[i, j] = coupling[j, i] = 1.0
    return coupling


def save_forecasts(path, y, pred, intervals=None):
    """Write long-format forecasts: t, node, step, y, pred[, lo, hi].

    ``y`` and ``pred`` are (T, N, steps); ``intervals`` is an optional
    (lo, hi) pair of the same shape.
    """
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if y.shape != pred.shape or y.ndim != 3:
        raise DataError(f"save_forecasts: misaligned shapes {y.shape} vs {pred.shape}")
    if intervals is not None:
        lo, hi = (np.asarray(a, dtype=np.float64) for a in intervals)
        if lo.shape != y.shape or hi.shape != y.shape:
            raise DataError("save_forecasts: interval shapes misaligned")
    header = ["t", "node", "step", "y", "pred"]
    if intervals is not None:
        header += ["lo", "hi"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(y.shape[0]):
            for n in range(y.shape[1]):
                for s in range(y.shape[2]):
                    row = [t, n, s + 1, fmt(y[t, n, s]), fmt(pred[t, n, s])]
                    if intervals is not None:
                        row += [fmt(lo[t, n, s]), fmt(hi[t, n, s])]
                    writer.writerow(row)


def load_forecasts(path):
    """Read :func:`save_forecasts` output back into dense arrays.

    Returns (y, pred, intervals_or_None) with shapes (T, N, steps).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_intervals = "lo" in header
        records = [row for row in reader]
    if not records:
        return (np.zeros((0, 0, 0)),) * 2 + (None,)
    ts = sorted({int(r[0]) for r in records})
    ns = sorted({int(r[1]) for r in records})
    ss = sorted({int(r[2]) for r in records})
    shape = (len(ts), len(ns), len(ss))
    y = np.full(shape, np.nan)
    pred = np.full(shape, np.nan)
    lo = np.full(shape, np.nan) if has_intervals else None
    hi = np.full(shape, np.nan) if has_intervals else None
    t_ix = {v: i for i, v in enumerate(ts)}
    n_ix = {v: i for i, v in enumerate(ns)}
    s_ix = {v: i for i, v in enumerate(ss)}
    for row in records:
        i, j, k = t_ix[int(row[0])], n_ix[int(row[1])], s_ix[int(row[2])]
        y[i, j, k] = float(row[3])
        pred[i, j, k] = float(row[4])
        if has_intervals:
            lo[i, j, k] = float(row[5])
            hi[i, j, k] = float(row[6])
    return y, pred, ((lo, hi) if has_intervals else None)
