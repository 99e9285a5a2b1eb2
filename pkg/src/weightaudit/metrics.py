"""Behavioral novelty metrics: error-set IoU, prediction overlap, Chamfer and MMD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._parallel import pmap
from .inference import PredictionRecord
from .model import PointCloud


@dataclass(frozen=True)
class IoU:
    """Error-set IoU. ``both_perfect`` marks the 0/0 case, reported as 1.0."""

    value: float
    both_perfect: bool = False

    def __float__(self) -> float:
        return self.value


def _same_n(a: PredictionRecord, b: PredictionRecord) -> None:
    if a.n != b.n:
        raise ValueError(f"records evaluated on different datasets (n={a.n} vs n={b.n})")


def error_iou_flagged(a: PredictionRecord, b: PredictionRecord) -> IoU:
    _same_n(a, b)
    union = len(a.error_set | b.error_set)
    if union == 0:
        return IoU(1.0, True)
    return IoU(len(a.error_set & b.error_set) / union)


def error_iou(a: PredictionRecord, b: PredictionRecord) -> float:
    """|I1 & I2| / |I1 | I2| over the misclassified indices of two checkpoints."""
    return error_iou_flagged(a, b).value


def max_similarity(query: PredictionRecord, training: Sequence[PredictionRecord]) -> tuple[float, str]:
    """Highest error IoU between ``query`` and any training record (first wins ties)."""
    if not training:
        raise ValueError("training list is empty")
    best, best_id = -1.0, ""
    for rec in training:
        v = error_iou(query, rec)
        if v > best:
            best, best_id = v, rec.checkpoint_id
    return best, best_id


def prediction_overlap(a: PredictionRecord, b: PredictionRecord) -> float:
    _same_n(a, b)
    return float(np.count_nonzero(a.predictions == b.predictions)) / a.n


def overlap_lower_bound(acc_a: float, acc_b: float) -> float:
    """Smallest possible agreement of two classifiers with these accuracies."""
    return max(acc_a + acc_b - 1.0, 0.0)


@dataclass(frozen=True)
class SimilarityMatrix:
    row_ids: list[str]
    col_ids: list[str]
    values: np.ndarray

    def rows(self) -> list[tuple[str, str, float]]:
        return [
            (r, c, float(self.values[i, j]))
            for i, r in enumerate(self.row_ids)
            for j, c in enumerate(self.col_ids)
        ]


def iou_matrix(rows: Sequence[PredictionRecord], cols: Sequence[PredictionRecord]) -> SimilarityMatrix:
    vals = pmap(lambda r: [error_iou(r, c) for c in cols], rows)
    return SimilarityMatrix(
        [r.checkpoint_id for r in rows],
        [c.checkpoint_id for c in cols],
        np.array(vals, dtype=np.float64).reshape(len(rows), len(cols)),
    )


# --- point clouds -----------------------------------------------------------


def _points(pc: PointCloud | np.ndarray) -> np.ndarray:
    p = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("point cloud is empty")
    return p


def _nn_sq(src: np.ndarray, tree: cKDTree, dst: np.ndarray) -> np.ndarray:
    _, idx = tree.query(src, k=1)
    diff = src - dst[idx]
    return (diff * diff).sum(axis=1)


def chamfer(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray) -> float:
    """Symmetric Chamfer distance with squared Euclidean terms, each side averaged."""
    pa, pb = _points(a), _points(b)
    ta, tb = cKDTree(pa), cKDTree(pb)
    # squared distances recomputed from the matched points so both directions
    # share the exact arithmetic of the brute-force form
    return float(_nn_sq(pa, tb, pb).mean() + _nn_sq(pb, ta, pa).mean())


def chamfer_bruteforce(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray) -> float:
    pa, pb = _points(a), _points(b)
    diff = pa[:, None, :] - pb[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def min_cd_to_set(
    query: PointCloud | np.ndarray,
    references: Sequence[PointCloud | np.ndarray],
    ids: Sequence[str] | None = None,
) -> tuple[float, str]:
    if len(references) == 0:
        raise ValueError("reference list is empty")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(references))]
    d = pmap(lambda r: chamfer(query, r), references)
    j = int(np.argmin(d))
    return float(d[j]), ids[j]


def chamfer_matrix(rows: Sequence[PointCloud], cols: Sequence[PointCloud]) -> np.ndarray:
    vals = pmap(lambda r: [chamfer(r, c) for c in cols], rows)
    return np.array(vals, dtype=np.float64).reshape(len(rows), len(cols))


def mmd(generated: Sequence[PointCloud], reference: Sequence[PointCloud]) -> float:
    """Mean over reference shapes of the smallest Chamfer distance to any generated shape."""
    if len(generated) == 0 or len(reference) == 0:
        raise ValueError("both shape lists must be non-empty")
    return float(chamfer_matrix(reference, generated).min(axis=1).mean())
