"""Command-line entry point.

Exit codes: 0 success, 1 invalid invocation or input (nothing written),
2 failure during computation (partial output removed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from ._parallel import set_threads
from .audit import (
    predict_all,
    run_behavior_audit,
    run_idim,
    run_shape_audit,
    run_symmetry_check,
    run_weight_space_audit,
)
from .baselines import KINDS, BaselineConfig, generate
from .inference import EmptySurfaceError, GridSpec, decision_map, extract_surface, write_pgm
from .model import (
    CheckpointSet,
    load_checkpoint_set,
    load_dataset,
    load_point_cloud,
    save_checkpoint_set,
    save_dataset,
    save_point_cloud,
    member_filename,
)
from .report import new_report, table_csv, write_report, Table
from .symmetry import DEFAULT_BUDGET, MODES, orbit_size
from .synthetic import SYNTH_MODES, BlobTask, SyntheticPopulationSpec, synthesize_population

log = logging.getLogger("weightaudit")


class UsageError(Exception):
    """Bad invocation or unusable input; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; usage problems are code 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# option name -> (argparse kwargs, default). Defaults are applied after the
# config file so that flags > config > defaults.
_OPTIONS: dict[str, tuple[dict[str, Any], Any]] = {
    "train": ({"help": "training checkpoint set (manifest file or directory)"}, None),
    "gen": ({"help": "generated checkpoint set"}, None),
    "baseline": ({"action": "append", "help": "baseline checkpoint set; repeatable, NAME=PATH or PATH"}, None),
    "data": ({"help": "DSET dataset file"}, None),
    "points": ({"help": "point source: DSET, PC3D, checkpoint set, or comma-separated PC3D files/dirs"}, None),
    "mode": ({"choices": MODES, "help": "symmetry handling for weight distances"}, "none"),
    "budget": ({"type": int, "help": "max orbit size for exhaustive mode"}, DEFAULT_BUDGET),
    "sigma": ({"type": float, "help": "noise standard deviation"}, 0.0),
    "sigma_grid": ({"help": "comma-separated sigma values"}, None),
    "k": ({"help": "integer or comma-separated list"}, None),
    "count": ({"type": int, "help": "number of members / actions to generate"}, None),
    "resolution": ({"type": int, "help": "grid resolution"}, None),
    "threshold": ({"type": float, "help": "level-set threshold for neural fields"}, 0.0),
    "seed": ({"type": int, "help": "random seed (required by stochastic commands)"}, None),
    "threads": ({"type": int, "help": "cap on worker threads"}, None),
    "out": ({"help": "output directory (must not exist or be empty)"}, None),
    "format": ({"choices": ("csv", "json"), "help": "report format"}, "csv"),
    "config": ({"help": "JSON config file; flags override it"}, None),
    "kind": ({"choices": KINDS, "help": "baseline generator"}, "noise"),
    "top_fraction": ({"type": float, "help": "keep the most accurate fraction of sources (needs --data)"}, None),
    "population": ({"choices": SYNTH_MODES, "help": "synthetic generated-population type"}, "replica"),
    "base_count": ({"type": int, "help": "synthetic training runs"}, 20),
}

_COMMANDS: dict[str, tuple[str, list[str], list[str], bool]] = {
    # name: (help, options, required options, stochastic)
    "nn-dist": ("nearest-training distances, histograms and heatmaps",
                ["train", "gen", "mode", "budget", "seed", "out", "format"], ["train", "gen", "out"], False),
    "behavior": ("accuracy / max-similarity scatter and prediction overlap",
                 ["train", "gen", "baseline", "data", "mode", "budget", "sigma_grid", "count", "seed", "out",
                  "format"],
                 ["train", "gen", "data", "out"], False),
    "shape": ("Chamfer novelty and MMD for neural fields",
              ["train", "gen", "points", "resolution", "threshold", "out", "format"],
              ["train", "gen", "points", "out"], False),
    "baseline": ("generate a baseline checkpoint set",
                 ["train", "kind", "sigma", "k", "count", "top_fraction", "data", "seed", "out"],
                 ["train", "out"], True),
    "idim": ("MLE intrinsic dimension sweep", ["points", "k", "out", "format"], ["points", "out"], False),
    "symmetry-check": ("verify function preservation under random symmetry actions",
                       ["train", "gen", "count", "data", "seed", "out", "format"], ["train", "out"], True),
    "synth": ("write a synthetic training/generated population",
              ["population", "sigma", "k", "count", "base_count", "seed", "out"], ["out"], True),
    "decision-map": ("decision maps over the data's principal plane",
                     ["train", "data", "resolution", "out"], ["train", "data", "out"], False),
    "field-extract": ("extract neural-field surfaces as PC3D",
                      ["train", "resolution", "threshold", "out"], ["train", "out"], False),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="weightaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"weightaudit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (help_text, opts, _, _) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for opt in opts + ["threads", "config"]:
            kwargs, _default = _OPTIONS[opt]
            p.add_argument("--" + opt.replace("_", "-"), dest=opt, default=None, **kwargs)
    return parser


def effective_config(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    opts = _COMMANDS[command][1] + ["threads"]
    cfg: dict[str, Any] = {}
    if ns.config:
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for opt in opts:
        v = getattr(ns, opt, None)
        if v is not None:
            cfg[opt] = v
        elif opt not in cfg:
            cfg[opt] = _OPTIONS[opt][1]
    return cfg


# --- validation helpers -----------------------------------------------------


def _int_list(v: Any, name: str) -> list[int]:
    if isinstance(v, (list, tuple)):
        items = v
    else:
        items = [s for s in str(v).split(",") if s.strip()]
    try:
        return [int(s) for s in items]
    except ValueError as exc:
        raise UsageError(f"--{name} expects integers, got {v!r}") from exc


def _float_list(v: Any, name: str) -> list[float]:
    items = v if isinstance(v, (list, tuple)) else [s for s in str(v).split(",") if s.strip()]
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise UsageError(f"--{name} expects numbers, got {v!r}") from exc


def _load_set(path: str, flag: str) -> CheckpointSet:
    try:
        return load_checkpoint_set(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"--{flag}: {exc}") from exc


def _load_data(path: str):
    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"--data: {exc}") from exc


def _pc3d_paths(spec: str) -> list[Path]:
    out: list[Path] = []
    for part in str(spec).split(","):
        p = Path(part)
        if p.is_dir():
            out += sorted(p.glob("*.pc3d"))
        elif p.is_file():
            out.append(p)
        else:
            raise UsageError(f"--points: not found: {p}")
    if not out:
        raise UsageError("--points: no PC3D files found")
    return out


def _point_matrix(spec: str) -> np.ndarray:
    p = Path(spec)
    if not p.exists():
        raise UsageError(f"--points: not found: {p}")
    try:
        if p.is_dir() or p.suffix == ".json":
            return load_checkpoint_set(p).matrix()
        head = p.read_bytes()[:4]
        if head == b"DSET":
            return load_dataset(p).features.astype(np.float64)
        if head == b"PC3D":
            return load_point_cloud(p).points.astype(np.float64)
    except (OSError, ValueError) as exc:
        raise UsageError(f"--points: {exc}") from exc
    raise UsageError(f"--points: unrecognised file format {p}")


def _check_out(out: str) -> Path:
    path = Path(out)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise UsageError(f"--out {path} already exists and is not an empty directory")
    if not path.parent.exists():
        raise UsageError(f"--out parent directory does not exist: {path.parent}")
    return path


def _echo(cfg: dict[str, Any]) -> dict[str, Any]:
    # output location and thread count do not change results; keep reports byte-stable
    return {k: v for k, v in sorted(cfg.items()) if k not in ("out", "threads", "config")}


# --- commands -------------------------------------------------------------------
# Each command validates and loads inputs, then returns a writer that is run
# against a temporary directory. Validation failures never touch the output.


def _report_writer(cfg: dict[str, Any], sections: Callable[[], dict]) -> Callable[[Path], None]:
    def write(tmp: Path) -> None:
        report = new_report(_echo(cfg))
        report.sections.update(sections())
        write_report(report, tmp, cfg["format"])

    return write


def _check_budget(cfg, cs: CheckpointSet) -> None:
    if cfg["mode"] == "exhaustive" and len(cs):
        size = orbit_size(cs[0])
        if size > cfg["budget"]:
            raise UsageError(f"exhaustive mode needs --budget {size} for this architecture (got {cfg['budget']})")


def cmd_nn_dist(cfg):
    train, gen = _load_set(cfg["train"], "train"), _load_set(cfg["gen"], "gen")
    if train.arch != gen.arch:
        raise UsageError("--train and --gen have different architectures")
    _check_budget(cfg, train)
    return _report_writer(cfg, lambda: {
        "weight_space": run_weight_space_audit(train, gen, cfg["mode"], cfg["budget"], cfg["seed"])
    })


def _parse_baselines(items) -> dict[str, CheckpointSet]:
    out: dict[str, CheckpointSet] = {}
    for i, item in enumerate(items or []):
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = f"baseline{i}", item
        out[name] = _load_set(path, "baseline")
    return out


def cmd_behavior(cfg):
    train, gen = _load_set(cfg["train"], "train"), _load_set(cfg["gen"], "gen")
    baselines = _parse_baselines(cfg["baseline"])
    data = _load_data(cfg["data"])
    if cfg["sigma_grid"] is not None:
        if cfg["seed"] is None:
            raise UsageError("--sigma-grid draws noise baselines and needs --seed")
        for sigma in _float_list(cfg["sigma_grid"], "sigma-grid"):
            if sigma < 0:
                raise UsageError("--sigma-grid values must be >= 0")
            bc = BaselineConfig("noise", count=cfg["count"] or len(gen), seed=cfg["seed"], sigma=sigma)
            baselines[f"noise_{sigma:g}"] = generate(train, bc)
    for name, cs in [("train", train), ("gen", gen)] + list(baselines.items()):
        if cs.arch != train.arch:
            raise UsageError(f"{name}: architecture differs from --train")
        if cs.arch[0].in_dim != data.d or cs.arch[-1].out_dim != data.n_classes:
            raise UsageError(f"{name}: network shape does not match the dataset")
    _check_budget(cfg, train)
    return _report_writer(cfg, lambda: {
        "behavior": run_behavior_audit(train, gen, baselines, data, cfg["mode"], cfg["budget"])
    })


def _grid(cfg, default_res: int) -> GridSpec:
    res = cfg["resolution"] or default_res
    try:
        return GridSpec(
            tuple(cfg.get("grid_origin", (-1.0, -1.0, -1.0))),
            tuple(cfg.get("grid_extent", (2.0, 2.0, 2.0))),
            res,
            cfg["threshold"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid grid: {exc}") from exc


def cmd_shape(cfg):
    train, gen = _load_set(cfg["train"], "train"), _load_set(cfg["gen"], "gen")
    for name, cs in (("train", train), ("gen", gen)):
        if cs.arch[0].in_dim != 3 or cs.arch[-1].out_dim != 1:
            raise UsageError(f"--{name}: neural fields must map 3 inputs to 1 output")
    paths = _pc3d_paths(cfg["points"])
    try:
        clouds = [load_point_cloud(p) for p in paths]
    except (OSError, ValueError) as exc:
        raise UsageError(f"--points: {exc}") from exc
    grid = _grid(cfg, 64)
    ids = [p.stem for p in paths]
    return _report_writer(cfg, lambda: {"shape": run_shape_audit(train, gen, clouds, grid, ids)})


def cmd_baseline(cfg):
    source = _load_set(cfg["train"], "train")
    ranking = None
    if cfg["top_fraction"] is not None:
        if not cfg["data"]:
            raise UsageError("--top-fraction needs --data to rank sources by accuracy")
        data = _load_data(cfg["data"])
        recs = predict_all(source, data)
        order = sorted(range(len(recs)), key=lambda i: (-recs[i].accuracy, i))
        ranking = tuple(source[i].id for i in order)
    k = _int_list(cfg["k"], "k")[0] if cfg["k"] is not None else 1
    try:
        bc = BaselineConfig(cfg["kind"], count=cfg["count"] or 1, seed=cfg["seed"], sigma=cfg["sigma"], k=k,
                            top_fraction=cfg["top_fraction"], ranking=ranking)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if bc.kind == "average_k" and bc.k > len(source):
        raise UsageError(f"--k {bc.k} exceeds the {len(source)} sources")
    if bc.kind == "gaussian_fit" and len(source) < 2:
        raise UsageError("gaussian_fit needs at least 2 sources")

    def write(tmp: Path) -> None:
        save_checkpoint_set(generate(source, bc), tmp)

    return write


def cmd_idim(cfg):
    X = _point_matrix(cfg["points"])
    ks = _int_list(cfg["k"] if cfg["k"] is not None else "3,5,10,20", "k")
    return _report_writer(cfg, lambda: {"idim": run_idim(X, ks)})


def cmd_symmetry_check(cfg):
    sets = {"train": _load_set(cfg["train"], "train")}
    if cfg["gen"]:
        sets["gen"] = _load_set(cfg["gen"], "gen")
    inputs = None
    if cfg["data"]:
        data = _load_data(cfg["data"])
        if data.d != sets["train"].arch[0].in_dim:
            raise UsageError("--data feature dimension does not match the networks")
        inputs = data.features.astype(np.float64)
    count = cfg["count"] or 10
    return _report_writer(cfg, lambda: {"symmetry": run_symmetry_check(sets, count, cfg["seed"], inputs)})


def cmd_synth(cfg):
    k = _int_list(cfg["k"], "k")[0] if cfg["k"] is not None else 2
    try:
        spec = SyntheticPopulationSpec(cfg["population"], cfg["base_count"], cfg["count"] or 20, cfg["seed"],
                                       cfg["sigma"], k)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def write(tmp: Path) -> None:
        training, generated, test = synthesize_population(spec)
        train_data, _ = BlobTask().datasets(spec.seed)
        save_checkpoint_set(training, tmp / "training")
        save_checkpoint_set(generated, tmp / "generated")
        save_dataset(train_data, tmp / "train.dset")
        save_dataset(test, tmp / "test.dset")

    return write


def cmd_decision_map(cfg):
    cs = _load_set(cfg["train"], "train")
    data = _load_data(cfg["data"])
    if cs.arch[0].in_dim != data.d:
        raise UsageError("network input dimension does not match the dataset")
    res = cfg["resolution"] or 128
    if res < 2:
        raise UsageError("--resolution must be >= 2")

    def write(tmp: Path) -> None:
        for i, m in enumerate(cs.members):
            dm = decision_map(m, data, res)
            stem = member_filename(m, i)[:-4]
            write_pgm(dm.labels, max(data.n_classes, m.arch[-1].out_dim), tmp / f"{stem}.pgm")
            rows = [(r, c, float(dm.u[c]), float(dm.v[r]), int(dm.labels[r, c]))
                    for r in range(res) for c in range(res)]
            (tmp / f"{stem}.csv").write_text(table_csv(Table(["row", "col", "u", "v", "label"], rows)))

    return write


def cmd_field_extract(cfg):
    cs = _load_set(cfg["train"], "train")
    if cs.arch[0].in_dim != 3 or cs.arch[-1].out_dim != 1:
        raise UsageError("neural fields must map 3 inputs to 1 output")
    grid = _grid(cfg, 64)

    def write(tmp: Path) -> None:
        empty = []
        for i, m in enumerate(cs.members):
            try:
                pc = extract_surface(m, grid)
            except EmptySurfaceError:
                log.warning("skipping %s: empty surface", m.id)
                empty.append(m.id)
                continue
            save_point_cloud(pc, tmp / f"{member_filename(m, i)[:-4]}.pc3d")
        (tmp / "summary.json").write_text(json.dumps({"empty_surface": empty}, indent=2) + "\n")

    return write


_HANDLERS = {
    "nn-dist": cmd_nn_dist,
    "behavior": cmd_behavior,
    "shape": cmd_shape,
    "baseline": cmd_baseline,
    "idim": cmd_idim,
    "symmetry-check": cmd_symmetry_check,
    "synth": cmd_synth,
    "decision-map": cmd_decision_map,
    "field-extract": cmd_field_extract,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    ns = parser.parse_args(argv)
    if not ns.command:
        parser.print_usage(sys.stderr)
        return 1
    _, _, required, stochastic = _COMMANDS[ns.command]
    try:
        cfg = effective_config(ns.command, ns)
        missing = [r for r in required if cfg.get(r) in (None, "")]
        if missing:
            raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
        if stochastic and cfg.get("seed") is None:
            raise UsageError(f"{ns.command} is stochastic and needs --seed")
        if cfg.get("mode") not in (None, *MODES):
            raise UsageError(f"--mode must be one of {MODES}")
        if cfg.get("threads") is not None and int(cfg["threads"]) < 1:
            raise UsageError("--threads must be >= 1")
        out = _check_out(cfg["out"])
        set_threads(cfg.get("threads"))
        writer = _HANDLERS[ns.command](cfg)
    except UsageError as exc:
        print(f"weightaudit {ns.command}: error: {exc}", file=sys.stderr)
        return 1

    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        writer(tmp)
        if out.exists():
            out.rmdir()
        os.rename(tmp, out)
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit code 2
        shutil.rmtree(tmp, ignore_errors=True)
        log.debug("command failed", exc_info=True)
        print(f"weightaudit {ns.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
