"""Checkpoint, dataset and point-cloud types plus their binary file formats.

Checkpoint weights are stored as little-endian float32, one raw file per
member, layers in order with each weight matrix row-major followed by its
bias. The flat index of a parameter is its position in that stream.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
ROLES = ("training", "generated", "baseline")

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")
_SAFE_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


class FormatError(ValueError):
    """Raised when a file on disk does not match its declared format."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self) -> None:
        if int(self.in_dim) < 1 or int(self.out_dim) < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim


def validate_arch(arch: Sequence[LayerSpec]) -> tuple[LayerSpec, ...]:
    arch = tuple(arch)
    if not arch:
        raise ValueError("architecture has no layers")
    for i in range(len(arch) - 1):
        if arch[i].out_dim != arch[i + 1].in_dim:
            raise ValueError(
                f"layer {i} out_dim {arch[i].out_dim} does not chain into "
                f"layer {i + 1} in_dim {arch[i + 1].in_dim}"
            )
    return arch


def arch_n_params(arch: Sequence[LayerSpec]) -> int:
    return sum(spec.n_params for spec in arch)


def hidden_layers(arch: Sequence[LayerSpec]) -> list[int]:
    """Indices of layers whose outputs may be permuted (all but the last)."""
    return list(range(len(arch) - 1))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Network:
    """One dense MLP checkpoint; weights are float32 and read-only."""

    arch: tuple[LayerSpec, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    id: str = ""

    def __post_init__(self) -> None:
        arch = validate_arch(self.arch)
        if len(self.weights) != len(arch) or len(self.biases) != len(arch):
            raise ValueError("number of tensors does not match number of layers")
        ws, bs = [], []
        for i, (spec, w, b) in enumerate(zip(arch, self.weights, self.biases)):
            w, b = _frozen(w), _frozen(b)
            if w.shape != (spec.out_dim, spec.in_dim):
                raise ValueError(f"layer {i} weight shape {w.shape}, expected {(spec.out_dim, spec.in_dim)}")
            if b.shape != (spec.out_dim,):
                raise ValueError(f"layer {i} bias shape {b.shape}, expected {(spec.out_dim,)}")
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))
        flat = self.flatten()
        bad = np.flatnonzero(~np.isfinite(flat))
        if bad.size:
            raise ValueError(f"network {self.id!r} has non-finite value at flat index {int(bad[0])}")

    def flatten(self) -> np.ndarray:
        parts: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, arch: Sequence[LayerSpec], flat: np.ndarray, id: str = "") -> Network:
        arch = validate_arch(arch)
        flat = np.asarray(flat)
        if flat.ndim != 1 or flat.size != arch_n_params(arch):
            raise ValueError(f"flat vector has {flat.size} values, architecture needs {arch_n_params(arch)}")
        ws, bs, pos = [], [], 0
        for spec in arch:
            n = spec.out_dim * spec.in_dim
            ws.append(flat[pos:pos + n].reshape(spec.out_dim, spec.in_dim))
            pos += n
            bs.append(flat[pos:pos + spec.out_dim])
            pos += spec.out_dim
        return cls(arch, tuple(ws), tuple(bs), id)

    def with_id(self, id: str) -> Network:
        return Network(self.arch, self.weights, self.biases, id)

    def replace_layers(self, weights: Iterable[np.ndarray], biases: Iterable[np.ndarray]) -> Network:
        return Network(self.arch, tuple(weights), tuple(biases), self.id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.arch == other.arch
            and self.id == other.id
            and np.array_equal(self.flatten(), other.flatten())
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CheckpointSet:
    arch: tuple[LayerSpec, ...]
    members: tuple[Network, ...]
    role: str = "training"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arch = validate_arch(self.arch)
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "members", tuple(self.members))
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        seen: set[str] = set()
        for m in self.members:
            if m.arch != arch:
                raise ValueError(f"member {m.id!r} does not share the set architecture")
            if m.id in seen:
                raise ValueError(f"duplicate member id {m.id!r}")
            seen.add(m.id)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i: int) -> Network:
        return self.members[i]

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.members]

    def matrix(self) -> np.ndarray:
        """Members stacked as rows of a float64 matrix."""
        if not self.members:
            return np.zeros((0, arch_n_params(self.arch)))
        return np.stack([m.flatten() for m in self.members]).astype(np.float64)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float32, copy=True)
        y = np.array(self.labels, copy=True)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D matrix")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must be one per feature row")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            row = int(np.flatnonzero((y < 0) | (y >= self.n_classes))[0])
            raise ValueError(f"label {int(y[row])} out of range [0, {self.n_classes}) at row {row}")
        y = y.astype(np.int64)
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", int(self.n_classes))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.points, dtype=np.float32, copy=True)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"point cloud must be m x 3, got shape {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite coordinates")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


# --- checkpoint manifests -------------------------------------------------


def _arch_to_json(arch: Sequence[LayerSpec]) -> list[dict[str, Any]]:
    return [{"in": s.in_dim, "out": s.out_dim, "act": s.activation} for s in arch]


def _arch_from_json(items: Any) -> tuple[LayerSpec, ...]:
    if not isinstance(items, list):
        raise FormatError("manifest 'arch' must be a list")
    try:
        return validate_arch(LayerSpec(int(it["in"]), int(it["out"]), str(it["act"])) for it in items)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed arch entry: {exc}") from exc


def resolve_manifest(path: str | Path) -> Path:
    """Accept either a manifest file or a directory holding manifest.json."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {path}")
    return path


def load_checkpoint_set(manifest_path: str | Path) -> CheckpointSet:
    path = resolve_manifest(manifest_path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("arch", "role", "members"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing field {key!r}")
    arch = _arch_from_json(doc["arch"])
    n_params = arch_n_params(arch)
    expected = n_params * _F32.itemsize
    members: list[Network] = []
    seen: set[str] = set()
    for entry in doc["members"]:
        mid, fname = str(entry["id"]), str(entry["file"])
        if mid in seen:
            raise FormatError(f"{path}: duplicate member id {mid!r}")
        seen.add(mid)
        bin_path = path.parent / fname
        if not bin_path.is_file():
            raise FileNotFoundError(f"member {mid!r}: weight file not found: {bin_path}")
        raw = bin_path.read_bytes()
        if len(raw) != expected:
            raise FormatError(
                f"member {mid!r}: expected {expected} bytes ({n_params} float32 values), got {len(raw)}"
            )
        flat = np.frombuffer(raw, dtype=_F32)
        bad = np.flatnonzero(~np.isfinite(flat))
        if bad.size:
            raise FormatError(f"member {mid!r}: non-finite value at flat index {int(bad[0])}")
        members.append(Network.unflatten(arch, flat, mid))
    meta = {k: v for k, v in doc.items() if k not in ("arch", "role", "members")}
    return CheckpointSet(arch, tuple(members), str(doc["role"]), meta)


def member_filename(net: Network, index: int) -> str:
    if _SAFE_ID.match(net.id) and net.id not in (".", ".."):
        return f"{net.id}.bin"
    return f"member_{index:06d}.bin"


def save_checkpoint_set(cs: CheckpointSet, directory: str | Path) -> Path:
    """Write ``manifest.json`` plus one raw float32 file per member."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, net in enumerate(cs.members):
        fname = member_filename(net, i)
        (directory / fname).write_bytes(net.flatten().astype(_F32).tobytes())
        entries.append({"id": net.id, "file": fname})
    doc: dict[str, Any] = {"arch": _arch_to_json(cs.arch), "role": cs.role}
    doc.update(cs.meta)
    doc["members"] = entries
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest


# --- DSET -----------------------------------------------------------------


def dataset_to_bytes(ds: LabeledDataset) -> bytes:
    return b"".join(
        (
            b"DSET",
            struct.pack("<III", ds.n, ds.d, ds.n_classes),
            ds.features.astype(_F32).tobytes(),
            ds.labels.astype(_U32).tobytes(),
        )
    )


def dataset_from_bytes(raw: bytes) -> LabeledDataset:
    if len(raw) < 4 or raw[:4] != b"DSET":
        raise FormatError(f"bad magic {raw[:4]!r}, expected b'DSET'")
    if len(raw) < 16:
        raise FormatError("truncated DSET header")
    n, d, c = struct.unpack_from("<III", raw, 4)
    need = 16 + 4 * n * d + 4 * n
    if len(raw) < need:
        raise FormatError(f"truncated DSET payload: expected {need} bytes, got {len(raw)}")
    if len(raw) > need:
        raise FormatError(f"trailing bytes in DSET file: expected {need} bytes, got {len(raw)}")
    x = np.frombuffer(raw, dtype=_F32, count=n * d, offset=16).reshape(n, d)
    y = np.frombuffer(raw, dtype=_U32, count=n, offset=16 + 4 * n * d)
    if n and y.max() >= c:
        row = int(np.flatnonzero(y >= c)[0])
        raise FormatError(f"label {int(y[row])} out of range [0, {c}) at row {row}")
    return LabeledDataset(x, y.astype(np.int64), c)


def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path: str | Path) -> LabeledDataset:
    return dataset_from_bytes(Path(path).read_bytes())


# --- PC3D -----------------------------------------------------------------


def point_cloud_to_bytes(pc: PointCloud) -> bytes:
    return b"PC3D" + struct.pack("<I", len(pc)) + pc.points.astype(_F32).tobytes()


def point_cloud_from_bytes(raw: bytes) -> PointCloud:
    if len(raw) < 4 or raw[:4] != b"PC3D":
        raise FormatError(f"bad magic {raw[:4]!r}, expected b'PC3D'")
    if len(raw) < 8:
        raise FormatError("truncated PC3D header")
    (m,) = struct.unpack_from("<I", raw, 4)
    payload = len(raw) - 8
    if payload % 12:
        whole = payload // 12
        raise FormatError(f"truncated point record at byte offset {8 + 12 * whole}")
    if payload // 12 != m:
        raise FormatError(f"header declares {m} points, payload holds {payload // 12}")
    if m == 0:
        raise FormatError("point cloud has no points")
    pts = np.frombuffer(raw, dtype=_F32, offset=8).reshape(m, 3)
    return PointCloud(pts)


def save_point_cloud(pc: PointCloud, path: str | Path) -> None:
    Path(path).write_bytes(point_cloud_to_bytes(pc))


def load_point_cloud(path: str | Path) -> PointCloud:
    return point_cloud_from_bytes(Path(path).read_bytes())
