"""Spatial graph construction: transport-based node distances, the
sparse relevance mask, the scaled Laplacian, and the Chebyshev basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = [
    "StadMatrix",
    "StrgMask",
    "ScaledLaplacian",
    "ChebyshevBasis",
    "GraphBundle",
    "stad_distance",
    "build_stad",
    "sparsify",
    "build_stag",
    "scaled_laplacian",
    "chebyshev_basis",
    "build_graph_bundle",
]


@dataclass
class StadMatrix:
    """Similarity adjacency A[i,j] = 1 - distance(i,j), unit diagonal."""

    adjacency: np.ndarray
    distances: np.ndarray


@dataclass
class StrgMask:
    """Binary mask keeping each node's strongest neighbors."""

    mask: np.ndarray
    n_keep: int
    sparsity: float


@dataclass
class ScaledLaplacian:
    """(2 / lambda_max) (D - A) - I, spectrum inside [-1, 1]."""

    matrix: np.ndarray
    lambda_max: float
    degrees: np.ndarray
    adjacency: np.ndarray


@dataclass
class ChebyshevBasis:
    """[T_0(Lt), ..., T_{K-1}(Lt)] built by the three-term recurrence."""

    matrices: list[np.ndarray]
    order: int


@dataclass
class GraphBundle:
    """Everything the model needs about the sensor graph."""

    stad: StadMatrix
    strg: StrgMask
    a_stag: np.ndarray
    laplacian: ScaledLaplacian
    cheb: ChebyshevBasis


def stad_distance(u, v) -> float:
    """Normalized 1-D Wasserstein-1 distance between two volume series.

    Each series is normalized to unit mass over its window; the
    transport cost (sum of absolute CDF differences) is divided by the
    maximum attainable cost, window length - 1, so the result is in
    [0, 1]. All-zero series are treated as identical to each other and
    maximally distant from anything with mass.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"stad_distance: incompatible shapes {u.shape}, {v.shape}")
    if len(u) < 2:
        raise DimensionError("stad_distance: need at least two observations")
    su, sv = u.sum(), v.sum()
    if su <= 0 and sv <= 0:
        return 0.0
    if su <= 0 or sv <= 0:
        return 1.0
    diff = np.cumsum(u / su - v / sv)
    return float(np.abs(diff[:-1]).sum() / (len(u) - 1))


def build_stad(x) -> StadMatrix:
    """Pairwise distances over the rows of a node x time matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError(f"build_stad: need an (N>=2) x time matrix, got {x.shape}")
    n = x.shape[0]
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = stad_distance(x[i], x[j])
    return StadMatrix(adjacency=1.0 - dist, distances=dist)


def sparsify(stad: StadMatrix, p_sp: float = 0.01) -> StrgMask:
    """Keep the N_r largest entries of each adjacency row (self always kept).

    N_r = max(1, ceil(N * p_sp)); ties at the cutoff break toward the
    lower column index.
    """
    if not 0.0 < p_sp <= 1.0:
        raise ParameterError(f"sparsify: p_sp must be in (0, 1], got {p_sp}")
    a = stad.adjacency
    n = a.shape[0]
    n_keep = max(1, math.ceil(n * p_sp))
    mask = np.zeros((n, n))
    for i in range(n):
        mask[i, i] = 1.0
        others = np.delete(np.arange(n), i)
        # stable sort on negated values => ties favor the lower index
        order = others[np.argsort(-a[i, others], kind="stable")]
        mask[i, order[: n_keep - 1]] = 1.0
    return StrgMask(mask=mask, n_keep=n_keep, sparsity=p_sp)


def build_stag(stad: StadMatrix, strg: StrgMask) -> np.ndarray:
    """Masked weighted adjacency, symmetrized by elementwise max."""
    masked = stad.adjacency * strg.mask
    return np.maximum(masked, masked.T)


def _power_iteration(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 100000) -> float:
    rng = np.random.default_rng(12345)
    v = rng.normal(size=mat.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ mat @ v)
        # residual gives an a-posteriori bound on the eigenvalue error
        residual = float(np.linalg.norm(mat @ v - new * v))
        if abs(new - lam) <= tol * max(abs(new), 1.0) and residual <= 1e-7 * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def scaled_laplacian(a_stag) -> ScaledLaplacian:
    """Scale L = D - A so its spectrum fits in [-1, 1] for Chebyshev use.

    lambda_max comes from power iteration; an edgeless graph falls back
    to lambda_max = 2 (the classical normalized bound) to avoid a zero
    division.
    """
    a = np.asarray(a_stag, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"scaled_laplacian: need a square matrix, got {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-9:
        raise DimensionError(f"scaled_laplacian: input asymmetric by {asym:.3g}")
    if asym > 0.0:
        warnings.warn(f"symmetrizing adjacency (max asymmetry {asym:.3g})", stacklevel=2)
        a = 0.5 * (a + a.T)
    if np.any(a < 0):
        raise ParameterError("scaled_laplacian: adjacency entries must be nonnegative")
    degrees = a.sum(axis=1)
    lap = np.diag(degrees) - a
    lam = _power_iteration(lap)
    if lam < 1e-12:
        lam = 2.0
    n = a.shape[0]
    scaled = (2.0 / lam) * lap - np.eye(n)
    return ScaledLaplacian(matrix=scaled, lambda_max=lam, degrees=degrees, adjacency=a)


def chebyshev_basis(lap: ScaledLaplacian, order: int) -> ChebyshevBasis:
    """T_0 = I, T_1 = Lt, T_k = 2 Lt T_{k-1} - T_{k-2}."""
    if order < 1:
        raise ParameterError(f"chebyshev_basis: order must be >= 1, got {order}")
    lt = lap.matrix
    n = lt.shape[0]
    mats = [np.eye(n)]
    if order > 1:
        mats.append(lt.copy())
    for _ in range(2, order):
        mats.append(2.0 * lt @ mats[-1] - mats[-2])
    return ChebyshevBasis(matrices=mats, order=order)


def build_graph_bundle(train_x, p_sp: float = 0.01, cheb_order: int = 3) -> GraphBundle:
    """Full graph pipeline from a training-window node x time matrix."""
    stad = build_stad(train_x)
    strg = sparsify(stad, p_sp)
    a_stag = build_stag(stad, strg)
    lap = scaled_laplacian(a_stag)
    cheb = chebyshev_basis(lap, cheb_order)
    return GraphBundle(stad=stad, strg=strg, a_stag=a_stag, laplacian=lap, cheb=cheb)
