"""Maximum-likelihood intrinsic dimension from nearest-neighbour distance ratios.

The estimate is the pooled form

    m_k = [ 1 / (n (k - 1)) * sum_i sum_{j<k} log(T_k(x_i) / T_j(x_i)) ]^-1

where T_j(x) is the distance from x to its j-th nearest other point. This
averages the log ratios over all points before inverting; the per-point
variant (invert, then average) is not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

BRUTE_FORCE_MAX_N = 2000
KDTREE_MAX_DIM = 20


class IntrinsicDimError(ValueError):
    def __init__(self, msg: str, n_used: int = 0, n_dropped: int = 0):
        super().__init__(msg)
        self.n_used = n_used
        self.n_dropped = n_dropped


@dataclass(frozen=True)
class IdimResult:
    k: int
    estimate: float
    n_used: int
    n_dropped: int
    error: str | None = None


def _brute_knn(X: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    n = X.shape[0]
    out = np.empty((n, k))
    for start in range(0, n, chunk):
        block = X[start:start + chunk]
        diff = block[:, None, :] - X[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        rows = np.arange(block.shape[0])
        d[rows, start + rows] = np.inf
        part = np.partition(d, k - 1, axis=1)[:, :k]
        out[start:start + chunk] = np.sort(part, axis=1)
    return out


def _kdtree_knn(X: np.ndarray, k: int) -> np.ndarray:
    dist, idx = cKDTree(X).query(X, k=k + 1)
    own = idx == np.arange(X.shape[0])[:, None]
    # drop the query point itself; if a duplicate displaced it, drop the last column
    missing = ~own.any(axis=1)
    own[missing, -1] = True
    return dist[~own].reshape(X.shape[0], k)


def knn_distances(points: np.ndarray, k: int, backend: str = "auto") -> np.ndarray:
    """Sorted distances to the ``k`` nearest other points, one row per point."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    if backend == "auto":
        brute = X.shape[1] > KDTREE_MAX_DIM or X.shape[0] <= BRUTE_FORCE_MAX_N
        backend = "brute" if brute else "kdtree"
    if backend == "brute":
        return _brute_knn(X, k)
    if backend == "kdtree":
        return _kdtree_knn(X, k)
    raise ValueError(f"unknown backend {backend!r}")


def _check_k(n: int, k: int) -> None:
    if k < 2:
        raise IntrinsicDimError(f"k must be >= 2, got {k}")
    if n <= k:
        raise IntrinsicDimError(f"need more than k={k} points, got {n}")


def mle_from_knn(T: np.ndarray, k: int) -> IdimResult:
    """Pooled estimate from sorted neighbour distances ``T`` (at least k columns)."""
    n = T.shape[0]
    _check_k(n, k)
    Tk = T[:, :k]
    ok = Tk[:, 0] > 0
    n_used, n_dropped = int(ok.sum()), int(n - ok.sum())
    if n_used == 0:
        raise IntrinsicDimError("every point has a zero-distance neighbour", n_used, n_dropped)
    Tk = Tk[ok]
    total = float(np.log(Tk[:, k - 1:k] / Tk[:, : k - 1]).sum())
    if total <= 0:
        raise IntrinsicDimError(
            f"degenerate neighbourhoods: all {k - 1} log ratios are zero", n_used, n_dropped
        )
    return IdimResult(k, n_used * (k - 1) / total, n_used, n_dropped)


def mle_intrinsic_dimension(points: np.ndarray, k: int, backend: str = "auto") -> IdimResult:
    X = np.asarray(points, dtype=np.float64)
    _check_k(X.shape[0], k)
    return mle_from_knn(knn_distances(X, k, backend), k)


def mle_sweep(points: np.ndarray, ks: Sequence[int], backend: str = "auto") -> list[IdimResult]:
    """One result per k from a single neighbour search; a bad k yields an error row."""
    ks = [int(k) for k in ks]
    if not ks:
        return []
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    k_max = max((k for k in ks if 2 <= k < n), default=0)
    T = knn_distances(X, k_max, backend) if k_max else None
    results = []
    for k in ks:
        try:
            _check_k(n, k)
            results.append(mle_from_knn(T, k))
        except IntrinsicDimError as exc:
            results.append(IdimResult(k, math.nan, exc.n_used, exc.n_dropped, str(exc)))
    return results
