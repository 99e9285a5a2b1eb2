"""Full-batch gradient descent for small MLP classifiers (softmax cross-entropy)."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import LayerSpec, Network, validate_arch

Params = list[tuple[np.ndarray, np.ndarray]]


class TrainingDivergedError(RuntimeError):
    pass


def init_params(arch: Sequence[LayerSpec], rng: np.random.Generator) -> Params:
    return [
        (rng.normal(0.0, 1.0 / math.sqrt(s.in_dim), size=(s.out_dim, s.in_dim)), np.zeros(s.out_dim))
        for s in arch
    ]


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def loss_and_grad(params: Params, arch: Sequence[LayerSpec], X: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    hs = [np.asarray(X, dtype=np.float64)]
    zs = []
    for (w, b), spec in zip(params, arch):
        z = hs[-1] @ w.T + b
        zs.append(z)
        hs.append(_act(z, spec.activation))
    loss, g = cross_entropy(hs[-1], y)
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    for i in range(len(params) - 1, -1, -1):
        g = g * _act_grad(zs[i], hs[i + 1], arch[i].activation)
        grads[i] = (g.T @ hs[i], g.sum(axis=0))
        if i:
            g = g @ params[i][0]
    return loss, grads


def loss_only(params: Params, arch: Sequence[LayerSpec], X: np.ndarray, y: np.ndarray) -> float:
    h = np.asarray(X, dtype=np.float64)
    for (w, b), spec in zip(params, arch):
        h = _act(h @ w.T + b, spec.activation)
    return cross_entropy(h, y)[0]


def train(
    arch: Sequence[LayerSpec],
    X: np.ndarray,
    y: np.ndarray,
    seed: int | Sequence[int],
    steps: int = 500,
    lr: float = 0.1,
    retries: int = 3,
    id: str = "",
) -> Network:
    """Train from a seeded init; on a non-finite loss restart with half the learning rate."""
    arch = validate_arch(arch)
    for attempt in range(retries + 1):
        params = init_params(arch, np.random.default_rng(seed))
        rate = lr / 2**attempt
        for _ in range(steps):
            loss, grads = loss_and_grad(params, arch, X, y)
            if not math.isfinite(loss):
                break
            params = [(w - rate * gw, b - rate * gb) for (w, b), (gw, gb) in zip(params, grads)]
        else:
            if math.isfinite(loss_only(params, arch, X, y)) and all(
                np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in params
            ):
                return Network(arch, tuple(w for w, _ in params), tuple(b for _, b in params), id)
    raise TrainingDivergedError(f"training diverged after {retries} learning-rate halvings (lr={lr})")


def params_to_vector(params: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])


def vector_to_params(vec: np.ndarray, arch: Sequence[LayerSpec]) -> Params:
    out, pos = [], 0
    for s in arch:
        n = s.out_dim * s.in_dim
        w = vec[pos:pos + n].reshape(s.out_dim, s.in_dim)
        pos += n
        out.append((w, vec[pos:pos + s.out_dim]))
        pos += s.out_dim
    return out
