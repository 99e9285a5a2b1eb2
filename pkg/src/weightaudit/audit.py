"""End-to-end audits that turn checkpoint sets into report sections."""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .geometry import (
    NNRecord,
    heatmap_rows,
    histogram,
    histogram_intersection,
    freedman_diaconis_edges,
    nn_distances,
    sample_flat_indices,
)
from .inference import EmptySurfaceError, GridSpec, PredictionRecord, extract_surface, forward, predict
from .intrinsic_dim import mle_sweep
from .metrics import chamfer_matrix, max_similarity, mmd, overlap_lower_bound, prediction_overlap
from .model import CheckpointSet, LabeledDataset, PointCloud, arch_n_params
from .report import Section
from .symmetry import DEFAULT_BUDGET, random_augmentations

log = logging.getLogger(__name__)

HEATMAP_PERCENTILES = (0, 25, 50, 75, 100)
NN_COLUMNS = ("query_id", "nearest_id", "distance")
HIST_COLUMNS = ("edge_lo", "edge_hi", "count")


def _nn_rows(records: Sequence[NNRecord]) -> list[tuple[str, str, float]]:
    return [(r.query_id, r.nearest_id, r.distance) for r in records]


def percentile_members(distances: Sequence[float], percentiles: Sequence[float]) -> list[int]:
    """Index of the member sitting at each percentile of ``distances`` (nearest rank)."""
    order = np.argsort(np.asarray(distances), kind="stable")
    n = len(order)
    return [int(order[int(round(p / 100 * (n - 1)))]) for p in percentiles]


def run_weight_space_audit(
    training: CheckpointSet,
    generated: CheckpointSet,
    mode: str = "none",
    budget: int = DEFAULT_BUDGET,
    seed: int | None = None,
    percentiles: Sequence[float] = HEATMAP_PERCENTILES,
    n_random: int = 3,
    n_indices: int = 64,
) -> Section:
    """Nearest-training distances for generated and training members.

    Heatmap rows are emitted only when ``seed`` is given, since choosing the
    parameter indices and the random queries is stochastic.
    """
    if training.arch != generated.arch:
        raise ValueError("training and generated sets do not share an architecture")
    gen_nn = nn_distances(generated, training, mode, exclude_self=False, budget=budget)
    train_nn = nn_distances(training, training, mode, exclude_self=True, budget=budget)
    gd = np.array([r.distance for r in gen_nn])
    td = np.array([r.distance for r in train_nn])
    edges = freedman_diaconis_edges(np.concatenate([gd, td]))
    hg, ht = histogram(gd, edges), histogram(td, edges)

    sec = Section(
        meta={
            "mode": mode,
            "n_training": len(training),
            "n_generated": len(generated),
            "histogram_intersection": histogram_intersection(hg, ht),
            "generated_median_distance": float(np.median(gd)),
            "training_median_distance": float(np.median(td)),
        }
    )
    sec.add("nn_generated", NN_COLUMNS, _nn_rows(gen_nn))
    sec.add("nn_training", NN_COLUMNS, _nn_rows(train_nn))
    sec.add("hist_generated", HIST_COLUMNS, hg.rows())
    sec.add("hist_training", HIST_COLUMNS, ht.rows())

    if seed is not None:
        rng = np.random.default_rng([seed, 0x4EA7])
        indices = sample_flat_indices(arch_n_params(training.arch), n_indices, seed)
        picks = [(f"p{p:g}", i) for p, i in zip(percentiles, percentile_members(gd, percentiles))]
        n_rand = min(n_random, len(generated))
        picks += [(f"random{j}", int(i)) for j, i in enumerate(rng.choice(len(generated), n_rand, replace=False))]
        rows = []
        for tag, i in picks:
            rows += heatmap_rows(generated[i], training, indices, mode, 3, tag, budget)
        sec.add("heatmap", ("row_id", "flat_index", "value"), rows)
        sec.meta["heatmap_seed"] = seed
    return sec


def predict_all(cs: CheckpointSet, data: LabeledDataset) -> list[PredictionRecord]:
    return pmap(lambda m: predict(m, data), cs.members)


def run_behavior_audit(
    training: CheckpointSet,
    generated: CheckpointSet,
    baselines: Mapping[str, CheckpointSet] | None,
    data: LabeledDataset,
    mode: str = "none",
    budget: int = DEFAULT_BUDGET,
) -> Section:
    """Accuracy, max error-set similarity and prediction overlap against training."""
    populations: dict[str, CheckpointSet] = {"training": training, "generated": generated}
    for name, cs in (baselines or {}).items():
        if name in populations:
            raise ValueError(f"population name {name!r} is reserved")
        populations[name] = cs
    for name, cs in populations.items():
        if cs.arch != training.arch:
            raise ValueError(f"population {name!r} does not share the training architecture")

    records = {name: predict_all(cs, data) for name, cs in populations.items()}
    train_recs = records["training"]

    scatter = []
    pairs = []
    violations = 0
    for name, recs in records.items():
        for rec in recs:
            refs = [t for t in train_recs if not (name == "training" and t.checkpoint_id == rec.checkpoint_id)]
            if refs:
                sim, arg = max_similarity(rec, refs)
            else:
                sim, arg = float("nan"), ""
            scatter.append((rec.checkpoint_id, name, rec.accuracy, sim, arg))
            for t in refs:
                ov = prediction_overlap(rec, t)
                bound = overlap_lower_bound(rec.accuracy, t.accuracy)
                ok = ov >= bound
                violations += not ok
                pairs.append((name, rec.checkpoint_id, t.checkpoint_id, ov, bound, ok))

    by_id = {r.checkpoint_id: r for r in train_recs}

    def nearest_overlap(name: str) -> float:
        nn = nn_distances(populations[name], training, mode, exclude_self=(name == "training"), budget=budget)
        recs = records[name]
        return float(np.mean([prediction_overlap(rec, by_id[r.nearest_id]) for rec, r in zip(recs, nn)]))

    summary = [
        ("mean accuracy of training models", float(np.mean([r.accuracy for r in train_recs]))),
        ("pred overlap b/w training & nearest training", nearest_overlap("training") if len(training) > 1 else float("nan")),
        ("pred overlap b/w generated & nearest training", nearest_overlap("generated")),
    ]

    sec = Section(
        meta={
            "mode": mode,
            "n_test": data.n,
            "population_sizes": {name: len(cs) for name, cs in populations.items()},
            "overlap_pairs": len(pairs),
            "overlap_bound_violations": violations,
        }
    )
    sec.add("scatter", ("id", "population", "accuracy", "max_similarity", "argmax_id"), scatter)
    sec.add("overlap_summary", ("statistic", "value"), summary)
    sec.add("overlap_pairs", ("population", "id", "training_id", "overlap", "lower_bound", "ok"), pairs)
    return sec


def surfaces(cs: CheckpointSet, grid: GridSpec) -> tuple[list[str], list[PointCloud]]:
    """Extract every member's surface, skipping (with a warning) those with none."""

    def one(m):
        try:
            return extract_surface(m, grid)
        except EmptySurfaceError:
            log.warning("skipping %s: empty surface", m.id)
            return None

    out = pmap(one, cs.members)
    ids = [m.id for m, pc in zip(cs.members, out) if pc is not None]
    return ids, [pc for pc in out if pc is not None]


def run_shape_audit(
    training_fields: CheckpointSet,
    generated_fields: CheckpointSet,
    test_clouds: Sequence[PointCloud],
    grid: GridSpec,
    test_ids: Sequence[str] | None = None,
) -> Section:
    test_ids = list(test_ids) if test_ids is not None else [f"test_{i:04d}" for i in range(len(test_clouds))]
    if not test_clouds:
        raise ValueError("no test point clouds given")
    tr_ids, tr_pcs = surfaces(training_fields, grid)
    gen_ids, gen_pcs = surfaces(generated_fields, grid)
    if not gen_pcs:
        raise EmptySurfaceError("every generated field has an empty surface")
    if not tr_pcs:
        raise EmptySurfaceError("every training field has an empty surface")
    to_train = chamfer_matrix(gen_pcs, tr_pcs)
    to_test = chamfer_matrix(gen_pcs, list(test_clouds))
    rows = []
    for i, gid in enumerate(gen_ids):
        jt, js = int(np.argmin(to_train[i])), int(np.argmin(to_test[i]))
        rows.append((gid, float(to_train[i, jt]), tr_ids[jt], float(to_test[i, js]), test_ids[js]))
    summary = [
        ("training", mmd(tr_pcs, list(test_clouds))),
        ("generated", mmd(gen_pcs, list(test_clouds))),
    ]
    sec = Section(
        meta={
            "grid": {"origin": grid.origin, "extent": grid.extent, "resolution": grid.resolution,
                     "threshold": grid.threshold},
            "n_training": len(training_fields),
            "n_generated": len(generated_fields),
            "n_test": len(test_clouds),
            "skipped_training": sorted(set(training_fields.ids) - set(tr_ids)),
            "skipped_generated": sorted(set(generated_fields.ids) - set(gen_ids)),
        }
    )
    sec.add("min_cd", ("id", "min_cd_training", "nearest_training_id", "min_cd_test", "nearest_test_id"), rows)
    sec.add("mmd", ("population", "mmd_vs_test"), summary)
    return sec


def run_idim(points: np.ndarray, ks: Sequence[int]) -> Section:
    results = mle_sweep(points, ks)
    sec = Section(meta={"n_points": int(np.asarray(points).shape[0]), "dim": int(np.asarray(points).shape[1]),
                        "errors": {str(r.k): r.error for r in results if r.error}})
    sec.add("idim", ("k", "estimate", "n_used", "n_dropped"), [(r.k, r.estimate, r.n_used, r.n_dropped) for r in results])
    return sec


def run_symmetry_check(
    sets: Mapping[str, CheckpointSet],
    count: int,
    seed: int,
    inputs: np.ndarray | None = None,
    n_inputs: int = 100,
    tol: float = 1e-5,
) -> Section:
    """Largest output change under random function-preserving actions, per member."""
    rows = []
    worst = 0.0
    for set_index, (name, cs) in enumerate(sets.items()):
        X = inputs
        if X is None:
            X = np.random.default_rng([seed, 0x1A7]).standard_normal((n_inputs, cs.arch[0].in_dim))
        for idx, m in enumerate(cs.members):
            ref = forward(m, X)
            augs = random_augmentations(m, count, True, seed=[seed, set_index, idx])
            for j, aug in enumerate(augs):
                diff = float(np.max(np.abs(forward(aug, X) - ref)))
                worst = max(worst, diff)
                rows.append((name, m.id, j, diff, diff <= tol))
    sec = Section(meta={"tolerance": tol, "actions_per_member": count, "max_abs_diff": worst,
                        "violations": sum(not r[-1] for r in rows)})
    sec.add("invariance", ("population", "id", "action", "max_abs_diff", "ok"), rows)
    return sec
