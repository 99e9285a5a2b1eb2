"""Function-preserving group actions on MLP weights and orbit distance search.

Two symmetries are modeled: reordering the neurons of a hidden layer, and
negating a tanh neuron (its incoming row, its bias and its outgoing column).
Output neurons are never touched.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Network

MODES = ("none", "exhaustive", "aligned")
DEFAULT_BUDGET = 1_000_000


class OrbitBudgetError(ValueError):
    def __init__(self, required: int, budget: int):
        super().__init__(f"exhaustive orbit needs a budget of {required} actions, budget is {budget}")
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class PermutationAction:
    layer_index: int
    perm: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "perm", tuple(int(p) for p in self.perm))


@dataclass(frozen=True)
class SignFlipAction:
    layer_index: int
    flips: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "flips", tuple(bool(f) for f in self.flips))


@dataclass(frozen=True)
class LayerAction:
    """Permute hidden layer ``layer`` (new neuron i = old neuron perm[i]), then negate flipped neurons."""

    layer: int
    perm: tuple[int, ...]
    flips: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "perm", tuple(int(p) for p in self.perm))
        object.__setattr__(self, "flips", tuple(bool(f) for f in self.flips))

    def to_json(self) -> dict:
        return {"layer": self.layer, "perm": list(self.perm), "flips": list(self.flips)}

    @classmethod
    def from_json(cls, d: dict) -> LayerAction:
        return cls(int(d["layer"]), tuple(d["perm"]), tuple(d["flips"]))

    def is_identity(self) -> bool:
        return self.perm == tuple(range(len(self.perm))) and not any(self.flips)


def _check_hidden(net: Network, layer_index: int) -> int:
    if not 0 <= layer_index < len(net.arch) - 1:
        raise ValueError(
            f"layer index {layer_index} is not a hidden layer (network has {len(net.arch) - 1} hidden layers)"
        )
    return net.arch[layer_index].out_dim


def _check_perm(perm: Sequence[int], h: int) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    if p.shape != (h,):
        raise ValueError(f"permutation has length {p.size}, layer has {h} neurons")
    if not np.array_equal(np.sort(p), np.arange(h)):
        raise ValueError(f"permutation {tuple(int(i) for i in p)} is not a bijection on [0, {h})")
    return p


def apply_permutation(net: Network, action: PermutationAction) -> Network:
    h = _check_hidden(net, action.layer_index)
    p = _check_perm(action.perm, h)
    ws, bs = list(net.weights), list(net.biases)
    i = action.layer_index
    ws[i] = ws[i][p]
    bs[i] = bs[i][p]
    ws[i + 1] = ws[i + 1][:, p]
    return net.replace_layers(ws, bs)


def apply_sign_flip(net: Network, action: SignFlipAction) -> Network:
    h = _check_hidden(net, action.layer_index)
    i = action.layer_index
    if net.arch[i].activation != "tanh":
        raise ValueError(f"sign flips need an odd activation; layer {i} is {net.arch[i].activation}")
    f = np.asarray(action.flips, dtype=bool)
    if f.shape != (h,):
        raise ValueError(f"flip mask has length {f.size}, layer has {h} neurons")
    s = np.where(f, -1.0, 1.0).astype(np.float32)
    ws, bs = list(net.weights), list(net.biases)
    ws[i] = ws[i] * s[:, None]
    bs[i] = bs[i] * s
    ws[i + 1] = ws[i + 1] * s[None, :]
    return net.replace_layers(ws, bs)


def apply_action(net: Network, actions: Iterable[LayerAction]) -> Network:
    for act in actions:
        net = apply_permutation(net, PermutationAction(act.layer, act.perm))
        if any(act.flips):
            net = apply_sign_flip(net, SignFlipAction(act.layer, act.flips))
    return net


def invert_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argsort(np.asarray(perm)))


def _flippable(net: Network, layer: int, include_sign_flips: bool) -> bool:
    return include_sign_flips and net.arch[layer].activation == "tanh"


def random_augmentations(
    net: Network, count: int, include_sign_flips: bool = True, seed: int | Sequence[int] = 0
) -> list[Network]:
    """Random members of the symmetry orbit of ``net``, one fresh draw per layer per output."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for c in range(count):
        acts = []
        for layer in range(len(net.arch) - 1):
            h = net.arch[layer].out_dim
            perm = rng.permutation(h)
            if _flippable(net, layer, include_sign_flips):
                flips = rng.random(h) < 0.5
            else:
                flips = np.zeros(h, dtype=bool)
            acts.append(LayerAction(layer, tuple(perm), tuple(flips)))
        out.append(apply_action(net, acts).with_id(f"{net.id}~aug{c}"))
    return out


def orbit_size(net: Network, include_sign_flips: bool = True) -> int:
    size = 1
    for layer in range(len(net.arch) - 1):
        h = net.arch[layer].out_dim
        size *= math.factorial(h) * (2**h if _flippable(net, layer, include_sign_flips) else 1)
    return size


def row_distances(M: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``q`` to each row of ``M`` (float64).

    Every distance in the package goes through here so that equal inputs give
    bit-equal distances regardless of batch size.
    """
    diff = np.asarray(M, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt((diff * diff).sum(axis=1))


def l2(a: Network, b: Network) -> float:
    return float(row_distances(b.flatten()[None, :], a.flatten())[0])


# --- exhaustive orbit search ----------------------------------------------


def _layer_actions(h: int, flippable: bool) -> tuple[np.ndarray, np.ndarray]:
    """All (perm, sign) pairs for one layer in lexicographic (perm, flips) order."""
    perms = np.array(list(itertools.permutations(range(h))), dtype=np.int64)
    if flippable:
        flips = np.array(list(itertools.product((False, True), repeat=h)), dtype=bool)
    else:
        flips = np.zeros((1, h), dtype=bool)
    P = np.repeat(perms, len(flips), axis=0)
    S = np.tile(np.where(flips, -1.0, 1.0), (len(perms), 1))
    return P, S


def _cost_table(
    wa: np.ndarray, ba: np.ndarray, wb: np.ndarray, bb: np.ndarray,
    rows: tuple[np.ndarray, np.ndarray] | None,
    cols: tuple[np.ndarray, np.ndarray] | None,
) -> np.ndarray:
    """Squared distance of one layer for every (incoming action, outgoing action) pair.

    ``cols`` acts on the layer's input neurons (previous hidden layer), ``rows`` on
    its output neurons. ``None`` means the identity.
    """
    out_dim, in_dim = wb.shape
    if rows is None:
        rows = (np.arange(out_dim)[None, :], np.ones((1, out_dim)))
    if cols is None:
        cols = (np.arange(in_dim)[None, :], np.ones((1, in_dim)))
    rp, rs = rows
    cp, cs = cols
    # (n_rows, out, in) with row action applied
    wr = wb[rp] * rs[:, :, None]
    br = bb[rp] * rs
    bias_cost = ((ba[None, :] - br) ** 2).sum(axis=1)
    table = np.empty((len(cp), len(rp)))
    chunk = max(1, 4_000_000 // max(1, len(rp) * out_dim * in_dim))
    for start in range(0, len(cp), chunk):
        sl = slice(start, start + chunk)
        # wr[:, :, cp] is (n_rows, out, n_cols, in); bring column actions first
        t = np.transpose(wr[:, :, cp[sl]], (2, 0, 1, 3)) * cs[sl][:, None, None, :]
        table[sl] = ((wa[None, None] - t) ** 2).sum(axis=(2, 3))
    return table + bias_cost[None, :]


def _exhaustive(a: Network, b: Network, include_sign_flips: bool) -> tuple[float, list[LayerAction]]:
    A = [w.astype(np.float64) for w in a.weights]
    Ab = [x.astype(np.float64) for x in a.biases]
    B = [w.astype(np.float64) for w in b.weights]
    Bb = [x.astype(np.float64) for x in b.biases]
    n_hidden = len(a.arch) - 1
    acts = [
        _layer_actions(a.arch[l].out_dim, _flippable(a, l, include_sign_flips)) for l in range(n_hidden)
    ]
    if n_hidden == 0:
        d = sum(((A[0] - B[0]) ** 2).sum(), ((Ab[0] - Bb[0]) ** 2).sum())
        return float(np.sqrt(d)), []
    shape = tuple(len(p) for p, _ in acts)
    total = np.zeros(shape)
    for layer in range(n_hidden + 1):
        rows = acts[layer] if layer < n_hidden else None
        cols = acts[layer - 1] if layer > 0 else None
        table = _cost_table(A[layer], Ab[layer], B[layer], Bb[layer], rows, cols)
        bshape = [1] * n_hidden
        if layer == 0:
            bshape[0] = shape[0]
            total += table[0].reshape(bshape)
        elif layer == n_hidden:
            bshape[-1] = shape[-1]
            total += table[:, 0].reshape(bshape)
        else:
            bshape[layer - 1] = shape[layer - 1]
            bshape[layer] = shape[layer]
            total += table.reshape(bshape)
    flat_best = int(np.argmin(total))  # first minimum = lexicographically smallest witness
    idx = np.unravel_index(flat_best, shape)
    witness = []
    for layer, i in enumerate(idx):
        P, S = acts[layer]
        witness.append(LayerAction(layer, tuple(P[i]), tuple(S[i] < 0)))
    return float(np.sqrt(total[idx])), witness


# --- layer-wise assignment ------------------------------------------------


def align(a: Network, b: Network, include_sign_flips: bool = True, max_sweeps: int = 5) -> list[LayerAction]:
    """Layer-wise neuron matching of ``b`` onto ``a``.

    Each hidden neuron is described by its incoming row, bias and outgoing
    column. For tanh layers the sign of every candidate pair is chosen to
    minimise the pair cost before the assignment is solved, layer by layer from
    input to output. A layer's outgoing columns only line up once the next
    layer is matched, so the sweep is repeated while it lowers the distance.
    The same refinement also starts from a sweep that matches on incoming
    rows and bias alone; the closer of the two results is returned.
    """
    best_d, best_w = np.inf, []
    for first_full in (True, False):
        d, w = _refine(a, b, include_sign_flips, max_sweeps, first_full)
        if d < best_d:
            best_d, best_w = d, w
    return best_w


def _refine(
    a: Network, b: Network, include_sign_flips: bool, max_sweeps: int, first_full: bool
) -> tuple[float, list[LayerAction]]:
    n_hidden = len(a.arch) - 1
    perms = [np.arange(a.arch[i].out_dim) for i in range(n_hidden)]
    flips = [np.zeros(a.arch[i].out_dim, dtype=bool) for i in range(n_hidden)]
    cur = b
    best = np.inf
    for sweep in range(max_sweeps):
        prev = (cur, [p.copy() for p in perms], [f.copy() for f in flips])
        for layer in range(n_hidden):
            full = first_full or sweep > 0
            perm, flip = _match_layer(a, cur, layer, _flippable(a, layer, include_sign_flips), full)
            cur = apply_action(cur, [LayerAction(layer, perm, flip)])
            # compose with the earlier matching: new neuron i is old neuron perms[perm[i]]
            flips[layer] = flip ^ flips[layer][perm]
            perms[layer] = perms[layer][perm]
        d = l2(a, cur)
        if d >= best:
            cur, perms, flips = prev
            break
        best = d
    return best, [LayerAction(i, tuple(perms[i]), tuple(flips[i])) for i in range(n_hidden)]


def _match_layer(a: Network, b: Network, layer: int, flippable: bool, full: bool = True) -> tuple[np.ndarray, np.ndarray]:
    sig_a = _signatures(a, layer, full)
    sig_b = _signatures(b, layer, full)
    plus = ((sig_a[:, None, :] - sig_b[None, :, :]) ** 2).sum(axis=2)
    if flippable:
        minus = ((sig_a[:, None, :] + sig_b[None, :, :]) ** 2).sum(axis=2)
    else:
        minus = np.full_like(plus, np.inf)
    _, perm = linear_sum_assignment(np.minimum(plus, minus))
    rows = np.arange(len(perm))
    return perm, minus[rows, perm] < plus[rows, perm]


def _signatures(net: Network, layer: int, full: bool = True) -> np.ndarray:
    w_in = net.weights[layer].astype(np.float64)
    b = net.biases[layer].astype(np.float64)
    if not full:
        return np.concatenate([w_in, b[:, None]], axis=1)
    w_out = net.weights[layer + 1].astype(np.float64)
    return np.concatenate([w_in, b[:, None], w_out.T], axis=1)


def orbit_min_distance(
    a: Network,
    b: Network,
    mode: str = "none",
    budget: int = DEFAULT_BUDGET,
    include_sign_flips: bool = True,
) -> tuple[float, list[LayerAction]]:
    """L2 distance from ``a`` to the symmetry orbit of ``b``.

    Returns the distance and the action that maps ``b`` to the closest orbit
    member found. ``exhaustive`` is exact, ``aligned`` is an upper bound that
    never exceeds the plain distance.
    """
    if a.arch != b.arch:
        raise ValueError("networks do not share an architecture")
    if mode == "none":
        return l2(a, b), []
    if mode == "exhaustive":
        size = orbit_size(b, include_sign_flips)
        if size > budget:
            raise OrbitBudgetError(size, budget)
        _, witness = _exhaustive(a, b, include_sign_flips)
        # re-measure through the shared kernel so the identity witness equals plain L2 exactly
        return l2(a, apply_action(b, witness)), witness
    if mode == "aligned":
        plain = l2(a, b)
        witness = align(a, b, include_sign_flips)
        d = l2(a, apply_action(b, witness))
        if d <= plain:
            return d, witness
        return plain, []
    raise ValueError(f"unknown symmetry mode {mode!r}; expected one of {MODES}")


def witness_to_json(witness: Sequence[LayerAction]) -> list[dict]:
    return [act.to_json() for act in witness]


def witness_from_json(items: Sequence[dict]) -> list[LayerAction]:
    return [LayerAction.from_json(d) for d in items]
