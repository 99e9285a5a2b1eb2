"""Desk-scale training and generated populations with known memorization behaviour."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from .baselines import BaselineConfig, average_k, noise_add
from .model import CheckpointSet, LabeledDataset, LayerSpec
from .trainer import train

SYNTH_MODES = ("replica", "interpolator", "fresh_retrain")


@dataclass(frozen=True)
class BlobTask:
    """Four Gaussian blobs in the plane, one per class."""

    n_train: int = 512
    n_test: int = 512
    spread: float = 1.0
    centers: tuple[tuple[float, float], ...] = ((1.5, 1.5), (-1.5, 1.5), (-1.5, -1.5), (1.5, -1.5))
    hidden: int = 16
    steps: int = 500
    lr: float = 0.1

    @property
    def arch(self) -> tuple[LayerSpec, ...]:
        return (LayerSpec(2, self.hidden, "tanh"), LayerSpec(self.hidden, len(self.centers), "identity"))

    def sample(self, n: int, rng: np.random.Generator) -> LabeledDataset:
        c = np.asarray(self.centers, dtype=np.float64)
        y = np.arange(n) % len(c)
        x = c[y] + self.spread * rng.standard_normal((n, 2))
        return LabeledDataset(x.astype(np.float32), y, len(c))

    def datasets(self, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
        rng = np.random.default_rng([seed, 0xDA7A])
        return self.sample(self.n_train, rng), self.sample(self.n_test, rng)


@dataclass(frozen=True)
class SyntheticPopulationSpec:
    mode: str
    base_count: int = 20
    generated_count: int = 20
    seed: int = 0
    sigma: float = 0.0
    k: int = 2

    def __post_init__(self) -> None:
        if self.mode not in SYNTH_MODES:
            raise ValueError(f"unknown population mode {self.mode!r}")
        if self.base_count < 1 or self.generated_count < 1:
            raise ValueError("population counts must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.mode == "interpolator" and not 1 <= self.k <= self.base_count:
            raise ValueError("interpolator k must lie in [1, base_count]")


def train_runs(task: BlobTask, data: LabeledDataset, seed: int, stream: int, count: int, prefix: str) -> list:
    X = data.features.astype(np.float64)
    y = data.labels
    return pmap(
        lambda i: train(task.arch, X, y, seed=[seed, stream, i], steps=task.steps, lr=task.lr, id=f"{prefix}{i:04d}"),
        range(count),
    )


def synthesize_population(
    spec: SyntheticPopulationSpec, task: BlobTask | None = None
) -> tuple[CheckpointSet, CheckpointSet, LabeledDataset]:
    """Train ``base_count`` runs and derive a generated set according to ``spec.mode``.

    Returns (training, generated, held-out test data).
    """
    task = task or BlobTask()
    train_data, test_data = task.datasets(spec.seed)
    training = CheckpointSet(
        task.arch, tuple(train_runs(task, train_data, spec.seed, 1, spec.base_count, "train_")), "training"
    )
    if spec.mode == "fresh_retrain":
        nets = train_runs(task, train_data, spec.seed, 2, spec.generated_count, "gen_")
    else:
        if spec.mode == "replica":
            cfg = BaselineConfig("noise", count=spec.generated_count, seed=spec.seed, sigma=spec.sigma)
            derived = noise_add(training, cfg)
        else:
            cfg = BaselineConfig("average_k", count=spec.generated_count, seed=spec.seed, k=spec.k)
            derived = average_k(training, cfg)
        nets = [m.with_id(f"gen_{i:04d}") for i, m in enumerate(derived.members)]
    meta = {"synthetic": {"mode": spec.mode, "seed": spec.seed, "sigma": spec.sigma, "k": spec.k}}
    generated = CheckpointSet(task.arch, tuple(nets), "generated", meta)
    return training, generated, test_data
