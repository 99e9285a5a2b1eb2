"""Weight-space distance analysis between checkpoint collections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._parallel import pmap
from .model import CheckpointSet, Network
from .symmetry import DEFAULT_BUDGET, LayerAction, apply_action, orbit_min_distance, row_distances


@dataclass(frozen=True)
class NNRecord:
    query_id: str
    nearest_id: str
    distance: float
    mode: str
    nearest_index: int = -1
    witness: tuple[LayerAction, ...] = ()


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        if len(self.edges) < 2 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("histogram edges must be strictly increasing")
        if len(self.counts) != len(self.edges) - 1:
            raise ValueError("need exactly one count per bin")

    def rows(self) -> list[tuple[float, float, int]]:
        return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def distances_to(
    query: Network,
    references: CheckpointSet,
    mode: str = "none",
    budget: int = DEFAULT_BUDGET,
    include_sign_flips: bool = True,
) -> tuple[np.ndarray, list[list[LayerAction]]]:
    """Distance from ``query`` to every reference, with the aligning action per reference."""
    if query.arch != references.arch:
        raise ValueError("query and references do not share an architecture")
    if mode == "none":
        d = row_distances(references.matrix(), query.flatten().astype(np.float64))
        return d, [[] for _ in range(len(references))]
    out = [orbit_min_distance(query, ref, mode, budget, include_sign_flips) for ref in references]
    return np.array([d for d, _ in out], dtype=np.float64), [w for _, w in out]


def nn_distances(
    queries: CheckpointSet,
    references: CheckpointSet,
    mode: str = "none",
    exclude_self: bool = False,
    budget: int = DEFAULT_BUDGET,
    include_sign_flips: bool = True,
) -> list[NNRecord]:
    """Nearest reference for each query; ties go to the lowest reference index."""
    if queries.arch != references.arch:
        raise ValueError("query and reference sets do not share an architecture")
    if len(references) == 0:
        raise ValueError("reference set is empty")
    ref_ids = np.array(references.ids, dtype=object)

    def one(q: Network) -> NNRecord:
        d, wit = distances_to(q, references, mode, budget, include_sign_flips)
        if exclude_self:
            d = np.where(ref_ids == q.id, np.inf, d)
            if np.all(np.isinf(d)):
                raise ValueError(f"no references left for {q.id!r} after excluding self")
        j = int(np.argmin(d))
        return NNRecord(q.id, references[j].id, float(d[j]), mode, j, tuple(wit[j]))

    return pmap(one, queries.members)


# --- histograms -------------------------------------------------------------

_MAX_FD_BINS = 100_000


def freedman_diaconis_width(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    q75, q25 = np.percentile(v, [75, 25])
    return 2.0 * (q75 - q25) * v.size ** (-1.0 / 3.0)


def freedman_diaconis_edges(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.array([lo - 0.5, lo + 0.5])
    width = freedman_diaconis_width(v)
    if width <= 0 or (hi - lo) / width > _MAX_FD_BINS:
        # degenerate spread; fall back to square-root binning
        return np.linspace(lo, hi, int(math.ceil(math.sqrt(v.size))) + 1)
    n_bins = max(1, int(math.ceil((hi - lo) / width)))
    edges = lo + width * np.arange(n_bins + 1)
    if edges[-1] < hi:
        edges = np.append(edges, edges[-1] + width)
    return edges


def histogram(values: Sequence[float] | np.ndarray, binning: str | Sequence[float] = "freedman_diaconis") -> Histogram:
    """Bin the finite entries of ``values``.

    Bins are left-closed except the last, which also holds values equal to
    the final edge. ``binning`` is ``"freedman_diaconis"`` or explicit edges.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no finite values to bin")
    if isinstance(binning, str):
        if binning != "freedman_diaconis":
            raise ValueError(f"unknown binning {binning!r}")
        edges = freedman_diaconis_edges(v)
    else:
        edges = np.asarray(binning, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("fixed edges must be strictly increasing with at least two entries")
        if v.min() < edges[0] or v.max() > edges[-1]:
            raise ValueError(f"values span [{v.min()}, {v.max()}], outside edges [{edges[0]}, {edges[-1]}]")
    n_bins = edges.size - 1
    idx = np.searchsorted(edges, v, side="right") - 1
    idx[idx == n_bins] = n_bins - 1
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return Histogram(edges, counts)


def histogram_intersection(a: Histogram, b: Histogram) -> float:
    """Shared mass of two histograms over identical edges, each normalized to 1."""
    if not np.array_equal(a.edges, b.edges):
        raise ValueError("histograms must share edges")
    pa = a.counts / a.counts.sum()
    pb = b.counts / b.counts.sum()
    return float(np.minimum(pa, pb).sum())


# --- per-parameter statistics ----------------------------------------------


@dataclass(frozen=True)
class ParameterStats:
    indices: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray


def per_parameter_stats(cs: CheckpointSet, indices: Sequence[int] | None = None) -> ParameterStats:
    if len(cs) == 0:
        raise ValueError("checkpoint set is empty")
    M = cs.matrix()
    if indices is None:
        idx = np.arange(M.shape[1])
    else:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= M.shape[1]):
            raise IndexError(f"flat index out of range [0, {M.shape[1]})")
    M = M[:, idx]
    n = M.shape[0]
    mean = M.sum(axis=0) / n
    if n > 1:
        std = np.sqrt(((M - mean) ** 2).sum(axis=0) / (n - 1))
    else:
        std = np.zeros_like(mean)
    return ParameterStats(idx, mean, std, M.min(axis=0), M.max(axis=0))


def pairwise_distance_summary(
    a: CheckpointSet, b: CheckpointSet, exclude_self: bool | None = None
) -> tuple[float, float]:
    """(mean over all cross pairs, mean nearest-neighbour distance) from ``a`` into ``b``.

    Pairs with equal ids are skipped when ``exclude_self`` is set; it defaults
    to ``a is b``.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both sets must be non-empty")
    if exclude_self is None:
        exclude_self = a is b
    B = b.matrix()
    b_ids = np.array(b.ids, dtype=object)
    all_pairs: list[np.ndarray] = []
    nn: list[float] = []
    for m in a.members:
        d = row_distances(B, m.flatten().astype(np.float64))
        if exclude_self:
            d = d[b_ids != m.id]
        if d.size == 0:
            continue
        all_pairs.append(d)
        nn.append(float(d.min()))
    if not nn:
        raise ValueError("no pairs remain after excluding self-comparisons")
    return float(np.concatenate(all_pairs).mean()), float(np.mean(nn))


# --- PCA ----------------------------------------------------------------------


def pca2(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top two principal axes and the centered data projected onto them.

    Each axis is signed so that its largest-magnitude coordinate is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError(f"pca2 needs at least 2 rows and 2 columns, got shape {X.shape}")
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        raise ValueError("data has zero variance")
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:2].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    return comps, Xc @ comps.T


# --- heatmaps -----------------------------------------------------------------


def sample_flat_indices(n_params: int, count: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    count = min(count, n_params)
    return np.sort(rng.choice(n_params, size=count, replace=False))


def heatmap_rows(
    query: Network,
    references: CheckpointSet,
    indices: np.ndarray,
    mode: str = "none",
    n_nearest: int = 3,
    tag: str = "",
    budget: int = DEFAULT_BUDGET,
) -> list[tuple[str, int, float]]:
    """(row_id, flat_index, value) rows for the query and its nearest references.

    Under a symmetry mode the references are shown after alignment to the query.
    """
    d, wit = distances_to(query, references, mode, budget)
    d = np.where(np.array(references.ids, dtype=object) == query.id, np.inf, d)
    order = [int(j) for j in np.argsort(d, kind="stable") if np.isfinite(d[j])][:n_nearest]
    prefix = f"{tag}/" if tag else ""
    rows = []
    qv = query.flatten()
    rows += [(f"{prefix}query/{query.id}", int(i), float(qv[i])) for i in indices]
    for rank, j in enumerate(order, start=1):
        ref = apply_action(references[j], wit[j]) if wit[j] else references[j]
        rv = ref.flatten()
        rows += [(f"{prefix}nn{rank}/{ref.id}", int(i), float(rv[i])) for i in indices]
    return rows
