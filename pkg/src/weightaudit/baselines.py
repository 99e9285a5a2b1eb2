"""Simple weight generators that a generative model has to beat.

All generators draw member ``i`` from its own RNG stream seeded by
``(seed, i)``, so output never depends on how members are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._parallel import pmap
from .model import CheckpointSet, Network

KINDS = ("noise", "average_k", "gaussian_fit")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    count: int = 1
    seed: int = 0
    sigma: float = 0.0
    k: int = 1
    top_fraction: float | None = None
    ranking: tuple[str, ...] | None = None  # source ids, best first; needed with top_fraction

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.top_fraction is not None:
            if not 0 < self.top_fraction <= 1:
                raise ValueError("top_fraction must lie in (0, 1]")
            if self.ranking is None:
                raise ValueError("top_fraction filtering needs a ranking of source ids")


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _filtered(source: CheckpointSet, cfg: BaselineConfig) -> list[Network]:
    members = list(source.members)
    if cfg.top_fraction is not None:
        by_id = {m.id: m for m in members}
        unknown = [i for i in cfg.ranking if i not in by_id]
        if unknown:
            raise ValueError(f"ranking names ids not in the source set: {unknown[:3]}")
        keep = max(1, math.ceil(cfg.top_fraction * len(cfg.ranking)))
        members = [by_id[i] for i in cfg.ranking[:keep]]
    if not members:
        raise ValueError("source set is empty after filtering")
    return members


def _provenance(cfg: BaselineConfig, sources: Sequence[Network]) -> dict:
    prov: dict = {"kind": cfg.kind, "seed": cfg.seed, "count": cfg.count}
    if cfg.kind == "noise":
        prov["sigma"] = cfg.sigma
        if cfg.top_fraction is not None:
            prov["top_fraction"] = cfg.top_fraction
    elif cfg.kind == "average_k":
        prov["k"] = cfg.k
    prov["source_ids"] = [m.id for m in sources]
    return {"provenance": prov}


def _as_set(source: CheckpointSet, vectors: list[np.ndarray], prefix: str, cfg: BaselineConfig,
            sources: Sequence[Network]) -> CheckpointSet:
    members = tuple(
        Network.unflatten(source.arch, v.astype(np.float32), f"{prefix}{i:04d}") for i, v in enumerate(vectors)
    )
    return CheckpointSet(source.arch, members, "baseline", _provenance(cfg, sources))


def noise_add(source: CheckpointSet, cfg: BaselineConfig) -> CheckpointSet:
    """Copies of randomly chosen sources with i.i.d. N(0, sigma^2) added to every weight."""
    if cfg.kind != "noise":
        raise ValueError("noise_add needs a noise config")
    pool = _filtered(source, cfg)
    flats = [m.flatten().astype(np.float64) for m in pool]

    def one(i: int) -> np.ndarray:
        rng = _rng(cfg.seed, i)
        base = flats[int(rng.integers(len(flats)))]
        if cfg.sigma == 0:
            return base
        return base + rng.normal(0.0, cfg.sigma, size=base.shape)

    return _as_set(source, pmap(one, range(cfg.count)), f"noise{cfg.sigma:g}_", cfg, pool)


def average_k(source: CheckpointSet, cfg: BaselineConfig) -> CheckpointSet:
    """Each member is the coordinate-wise mean of ``k`` distinct random sources."""
    if cfg.kind != "average_k":
        raise ValueError("average_k needs an average_k config")
    if cfg.k > len(source):
        raise ValueError(f"k={cfg.k} exceeds the {len(source)} available sources")
    M = source.matrix()

    def one(i: int) -> np.ndarray:
        pick = np.sort(_rng(cfg.seed, i).choice(len(source), size=cfg.k, replace=False))
        return M[pick].sum(axis=0) / cfg.k

    return _as_set(source, pmap(one, range(cfg.count)), f"avg{cfg.k}_", cfg, source.members)


def gaussian_fit(source: CheckpointSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and unbiased standard deviation over the source set."""
    if len(source) < 2:
        raise ValueError("fitting a Gaussian needs at least 2 sources")
    M = source.matrix()
    mean = M.sum(axis=0) / M.shape[0]
    std = np.sqrt(((M - mean) ** 2).sum(axis=0) / (M.shape[0] - 1))
    return mean, std


def gaussian_fit_sample(source: CheckpointSet, cfg: BaselineConfig) -> CheckpointSet:
    if cfg.kind != "gaussian_fit":
        raise ValueError("gaussian_fit_sample needs a gaussian_fit config")
    mean, std = gaussian_fit(source)

    def one(i: int) -> np.ndarray:
        return mean + std * _rng(cfg.seed, i).standard_normal(mean.shape)

    return _as_set(source, pmap(one, range(cfg.count)), "gauss_", cfg, source.members)


def generate(source: CheckpointSet, cfg: BaselineConfig) -> CheckpointSet:
    return {"noise": noise_add, "average_k": average_k, "gaussian_fit": gaussian_fit_sample}[cfg.kind](source, cfg)


def calibrate_sigma(
    score: Callable[[float], float],
    target: float,
    lo: float = 1e-4,
    hi: float = 1.0,
    iters: int = 30,
) -> float:
    """Noise level whose ``score`` (e.g. mean max-similarity) hits ``target``.

    ``score`` must be non-increasing in sigma. Bisection runs on log(sigma).
    """
    s_lo, s_hi = score(lo), score(hi)
    if target >= s_lo:
        return lo
    if target <= s_hi:
        return hi
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if score(math.exp(mid)) > target:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))
