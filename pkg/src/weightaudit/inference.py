"""Evaluate checkpoints as functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import pca2
from .model import LabeledDataset, Network, PointCloud


class EmptySurfaceError(ValueError):
    """The field never crosses the threshold inside the grid."""


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(net: Network, X: np.ndarray) -> np.ndarray:
    """Logits of ``net`` on the rows of ``X``, computed in float64."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.arch[0].in_dim:
        raise ValueError(f"input has shape {h.shape}, network expects (n, {net.arch[0].in_dim})")
    for spec, w, b in zip(net.arch, net.weights, net.biases):
        h = _activate(h @ w.astype(np.float64).T + b.astype(np.float64), spec.activation)
    return h


@dataclass(frozen=True)
class PredictionRecord:
    checkpoint_id: str
    predictions: np.ndarray
    accuracy: float
    error_set: frozenset[int] = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.predictions.shape[0])

    @classmethod
    def from_predictions(cls, checkpoint_id: str, predictions: np.ndarray, labels: np.ndarray) -> PredictionRecord:
        predictions = np.asarray(predictions, dtype=np.int64)
        labels = np.asarray(labels)
        if predictions.shape != labels.shape:
            raise ValueError("predictions and labels differ in length")
        wrong = np.flatnonzero(predictions != labels)
        n = predictions.shape[0]
        predictions = predictions.copy()
        predictions.flags.writeable = False
        return cls(checkpoint_id, predictions, 1.0 - wrong.size / n, frozenset(int(i) for i in wrong))

    def sorted_errors(self) -> list[int]:
        return sorted(self.error_set)


def predict(net: Network, data: LabeledDataset) -> PredictionRecord:
    if net.arch[-1].out_dim != data.n_classes:
        raise ValueError(f"network has {net.arch[-1].out_dim} outputs, dataset has {data.n_classes} classes")
    logits = forward(net, data.features)
    return PredictionRecord.from_predictions(net.id, np.argmax(logits, axis=1), data.labels)


# --- decision maps --------------------------------------------------------


@dataclass(frozen=True)
class DecisionMap:
    labels: np.ndarray  # [resolution, resolution]; row = second component, column = first
    u: np.ndarray
    v: np.ndarray
    components: np.ndarray
    mean: np.ndarray


def decision_grid(data: LabeledDataset, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Grid points in input space covering the 2-D PCA view of ``data``.

    Returns (inputs [resolution**2, d], u axis, v axis, components, mean).
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    X = data.features.astype(np.float64)
    components, projected = pca2(X)
    mean = X.mean(axis=0)
    axes = []
    for j in range(2):
        lo, hi = projected[:, j].min(), projected[:, j].max()
        pad = 0.1 * (hi - lo) if hi > lo else 0.5
        axes.append(np.linspace(lo - pad, hi + pad, resolution))
    u, v = axes
    uu, vv = np.meshgrid(u, v)  # rows follow v, columns follow u
    inputs = mean + uu.reshape(-1, 1) * components[0] + vv.reshape(-1, 1) * components[1]
    return inputs, u, v, components, mean


def decision_map(
    net: Network,
    data: LabeledDataset,
    resolution: int,
    classes: Sequence[int] | None = None,
) -> DecisionMap:
    """Predicted label on a grid over the dataset's top-2 principal plane.

    Off-plane coordinates are held at the data mean. ``classes`` restricts the
    argmax to a subset of labels.
    """
    if net.arch[0].in_dim != data.d:
        raise ValueError(f"network expects {net.arch[0].in_dim} inputs, dataset has {data.d} features")
    inputs, u, v, components, mean = decision_grid(data, resolution)
    logits = forward(net, inputs)
    if classes is None:
        labels = np.argmax(logits, axis=1)
    else:
        cls = np.asarray(sorted(set(int(c) for c in classes)))
        labels = cls[np.argmax(logits[:, cls], axis=1)]
    return DecisionMap(labels.reshape(resolution, resolution), u, v, components, mean)


def write_pgm(grid: np.ndarray, n_classes: int, path: str | Path) -> None:
    """Binary PGM with labels spread evenly over 0..255."""
    grid = np.asarray(grid)
    scale = 255 // max(1, n_classes - 1)
    pixels = np.clip(grid * scale, 0, 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


# --- neural field surfaces ------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    extent: tuple[float, float, float] = (2.0, 2.0, 2.0)
    resolution: tuple[int, int, int] = (64, 64, 64)
    threshold: float = 0.0

    def __post_init__(self) -> None:
        res = self.resolution
        if isinstance(res, (int, np.integer)):
            res = (int(res),) * 3
        object.__setattr__(self, "resolution", tuple(int(r) for r in res))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ValueError("resolution must be >= 2 on every axis")
        if len(self.extent) != 3 or min(self.extent) <= 0:
            raise ValueError("extent must be strictly positive on every axis")
        if len(self.origin) != 3:
            raise ValueError("origin must have 3 coordinates")

    def axes(self) -> list[np.ndarray]:
        return [o + e * np.arange(r) / (r - 1) for o, e, r in zip(self.origin, self.extent, self.resolution)]

    @property
    def step(self) -> np.ndarray:
        return np.array([e / (r - 1) for e, r in zip(self.extent, self.resolution)])


def sample_field(field_net: Network, grid: GridSpec) -> np.ndarray:
    if field_net.arch[0].in_dim != 3 or field_net.arch[-1].out_dim != 1:
        raise ValueError("a neural field must map 3 inputs to 1 output")
    ax, ay, az = grid.axes()
    pts = np.stack(np.meshgrid(ax, ay, az, indexing="ij"), axis=-1).reshape(-1, 3)
    return forward(field_net, pts)[:, 0].reshape(grid.resolution)


def _dedupe(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    order = np.lexsort(points.T[::-1])
    points = points[order]
    if len(points) < 2:
        return points
    drop = set()
    for i, j in sorted(cKDTree(points).query_pairs(tol)):
        if i not in drop:
            drop.add(j)
    keep = np.setdiff1d(np.arange(len(points)), np.fromiter(drop, dtype=np.int64, count=len(drop)))
    return points[keep]


def surface_crossings(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Interpolated threshold crossings (float64) of sampled field ``values``."""
    axes = grid.axes()
    t = grid.threshold
    found = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        v0, v1 = values[tuple(lo)], values[tuple(hi)]
        mask = (v0 < t) != (v1 < t)
        if not mask.any():
            continue
        idx = np.argwhere(mask)
        a, b = v0[mask], v1[mask]
        coords = np.stack([axes[k][idx[:, k]] for k in range(3)], axis=1)
        step = axes[axis][idx[:, axis] + 1] - axes[axis][idx[:, axis]]
        coords[:, axis] += (t - a) / (b - a) * step
        found.append(coords)
    if not found:
        return np.zeros((0, 3))
    return _dedupe(np.concatenate(found))


def extract_surface(field_net: Network, grid: GridSpec) -> PointCloud:
    """Threshold crossings of the field along every grid edge.

    Each straddling edge contributes the linearly interpolated crossing; the
    result is sorted lexicographically with near-duplicates (1e-9) removed.
    """
    pts = surface_crossings(sample_field(field_net, grid), grid)
    if len(pts) == 0:
        raise EmptySurfaceError(f"field {field_net.id!r} has no threshold crossings on the grid")
    return PointCloud(pts)
