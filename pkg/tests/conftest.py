from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from weightaudit.model import CheckpointSet, LayerSpec, Network

FIXTURES = Path(__file__).parent / "fixtures"


def random_net(arch, rng, id="net", scale=1.0) -> Network:
    arch = tuple(arch)
    ws = tuple(rng.normal(0, scale, size=(s.out_dim, s.in_dim)) for s in arch)
    bs = tuple(rng.normal(0, scale, size=s.out_dim) for s in arch)
    return Network(arch, ws, bs, id)


def mlp_arch(*dims, act="tanh"):
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        layers.append(LayerSpec(dims[i], dims[i + 1], "identity" if last else act))
    return tuple(layers)


def make_set(nets, role="training") -> CheckpointSet:
    return CheckpointSet(nets[0].arch, tuple(nets), role)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
