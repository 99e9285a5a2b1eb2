import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weightaudit.inference import forward
from weightaudit.model import LayerSpec
from weightaudit.symmetry import (
    LayerAction,
    OrbitBudgetError,
    PermutationAction,
    SignFlipAction,
    apply_action,
    apply_permutation,
    apply_sign_flip,
    invert_permutation,
    l2,
    orbit_min_distance,
    orbit_size,
    random_augmentations,
    witness_from_json,
    witness_to_json,
)

from conftest import mlp_arch, random_net


def naive_orbit_min(a, b):
    """Enumerate every permutation and flip of the single hidden layer by hand."""
    Wa1, ba1, Wa2, ba2 = (x.astype(np.float64) for x in (a.weights[0], a.biases[0], a.weights[1], a.biases[1]))
    Wb1, bb1, Wb2, bb2 = (x.astype(np.float64) for x in (b.weights[0], b.biases[0], b.weights[1], b.biases[1]))
    h = Wa1.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(h)):
        p = list(perm)
        for signs in itertools.product((1.0, -1.0), repeat=h):
            s = np.array(signs)
            d2 = (
                np.sum((Wa1 - s[:, None] * Wb1[p]) ** 2)
                + np.sum((ba1 - s * bb1[p]) ** 2)
                + np.sum((Wa2 - Wb2[:, p] * s[None, :]) ** 2)
                + np.sum((ba2 - bb2) ** 2)
            )
            best = min(best, np.sqrt(d2))
    return best


def test_exhaustive_matches_naive_enumeration():
    rng = np.random.default_rng(7)
    arch = mlp_arch(3, 4, 2)
    for _ in range(10):
        a, b = random_net(arch, rng, "a"), random_net(arch, rng, "b")
        d, w = orbit_min_distance(a, b, "exhaustive")
        assert abs(d - naive_orbit_min(a, b)) <= 1e-9
        assert abs(l2(a, apply_action(b, w)) - d) <= 1e-12


def test_recovers_hidden_action_exactly():
    rng = np.random.default_rng(3)
    net = random_net(mlp_arch(2, 4, 3, 2), rng, "n")
    acts = [LayerAction(0, (2, 0, 3, 1), (True, False, False, True)), LayerAction(1, (1, 2, 0), (False, True, False))]
    moved = apply_action(net, acts)
    d, w = orbit_min_distance(net, moved, "exhaustive")
    assert d == 0.0
    assert apply_action(moved, w) == net.with_id(moved.id)


def test_identical_nets_give_empty_distance_and_identity_witness(rng):
    net = random_net(mlp_arch(2, 3, 2), rng)
    d, w = orbit_min_distance(net, net, "exhaustive")
    assert d == 0.0
    assert all(a.is_identity() for a in w)


def test_exhaustive_tie_picks_identity():
    # all-zero networks: every action is optimal, the identity must win
    arch = mlp_arch(2, 3, 1)
    z = random_net(arch, np.random.default_rng(0), scale=0.0)
    _, w = orbit_min_distance(z, z, "exhaustive")
    assert w[0].perm == (0, 1, 2) and w[0].flips == (False, False, False)


def test_budget_error():
    net = random_net(mlp_arch(2, 9, 1), np.random.default_rng(0))
    assert orbit_size(net) == 362880 * 512
    with pytest.raises(OrbitBudgetError) as exc:
        orbit_min_distance(net, net, "exhaustive", budget=1000)
    assert exc.value.required == 362880 * 512


def test_unknown_mode(rng):
    net = random_net(mlp_arch(2, 2, 1), rng)
    with pytest.raises(ValueError, match="unknown symmetry mode"):
        orbit_min_distance(net, net, "fast")


def test_aligned_bounded_by_exhaustive_and_plain():
    rng = np.random.default_rng(11)
    arch = mlp_arch(3, 5, 2)
    for _ in range(20):
        a, b = random_net(arch, rng), random_net(arch, rng)
        ex, _ = orbit_min_distance(a, b, "exhaustive")
        al, w = orbit_min_distance(a, b, "aligned")
        pl, _ = orbit_min_distance(a, b, "none")
        assert ex - 1e-9 <= al <= pl
        assert abs(l2(a, apply_action(b, w)) - al) <= 1e-12


def test_aligned_recovers_planted_permutation():
    rng = np.random.default_rng(5)
    net = random_net(mlp_arch(4, 12, 8, 3), rng)
    perm0 = tuple(rng.permutation(12))
    acts = [LayerAction(0, perm0, tuple(rng.random(12) < 0.5)), LayerAction(1, tuple(rng.permutation(8)), (False,) * 8)]
    d, _ = orbit_min_distance(net, apply_action(net, acts), "aligned")
    assert d == 0.0


def test_relu_layers_take_no_flips():
    rng = np.random.default_rng(2)
    net = random_net(mlp_arch(2, 3, 1, act="relu"), rng)
    assert orbit_size(net) == 6
    with pytest.raises(ValueError, match="odd activation"):
        apply_sign_flip(net, SignFlipAction(0, (True, False, False)))
    for aug in random_augmentations(net, 5, seed=1):
        X = rng.normal(size=(20, 2))
        np.testing.assert_allclose(forward(aug, X), forward(net, X), atol=1e-6)


def test_invalid_permutation(rng):
    net = random_net(mlp_arch(2, 3, 1), rng)
    with pytest.raises(ValueError, match="bijection"):
        apply_permutation(net, PermutationAction(0, (0, 0, 1)))
    with pytest.raises(ValueError, match="length"):
        apply_permutation(net, PermutationAction(0, (0, 1)))
    with pytest.raises(ValueError, match="not a hidden layer"):
        apply_permutation(net, PermutationAction(1, (0,)))


def test_permutation_moves_rows_and_columns(rng):
    net = random_net(mlp_arch(2, 3, 2), rng)
    out = apply_permutation(net, PermutationAction(0, (2, 0, 1)))
    np.testing.assert_array_equal(out.weights[0][0], net.weights[0][2])
    np.testing.assert_array_equal(out.biases[0][1], net.biases[0][0])
    np.testing.assert_array_equal(out.weights[1][:, 2], net.weights[1][:, 1])
    np.testing.assert_array_equal(out.biases[1], net.biases[1])


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(6))))
def test_invert_permutation(perm):
    inv = invert_permutation(perm)
    assert [perm[i] for i in inv] == list(range(6))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_augmentation_preserves_function(seed, h1, h2):
    rng = np.random.default_rng(seed)
    net = random_net(mlp_arch(3, h1, h2, 2), rng)
    X = rng.normal(size=(50, 3))
    ref = forward(net, X)
    for aug in random_augmentations(net, 3, seed=seed):
        assert np.max(np.abs(forward(aug, X) - ref)) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distance_invariant_to_joint_action(seed):
    # acting on both networks by the same element leaves the plain L2 unchanged
    rng = np.random.default_rng(seed)
    arch = mlp_arch(2, 5, 2)
    a, b = random_net(arch, rng), random_net(arch, rng)
    act = [LayerAction(0, tuple(rng.permutation(5)), tuple(rng.random(5) < 0.5))]
    assert abs(l2(apply_action(a, act), apply_action(b, act)) - l2(a, b)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_orbit_distance_symmetric_and_invariant(seed):
    rng = np.random.default_rng(seed)
    arch = mlp_arch(2, 3, 2)
    a, b = random_net(arch, rng), random_net(arch, rng)
    d_ab, _ = orbit_min_distance(a, b, "exhaustive")
    d_ba, _ = orbit_min_distance(b, a, "exhaustive")
    assert abs(d_ab - d_ba) <= 1e-9
    moved = random_augmentations(b, 1, seed=seed)[0]
    assert abs(orbit_min_distance(a, moved, "exhaustive")[0] - d_ab) <= 1e-9
    assert d_ab <= l2(a, b)


def test_witness_json_roundtrip():
    w = [LayerAction(0, (1, 0), (True, False))]
    assert witness_from_json(witness_to_json(w)) == w


def test_augmentation_ids(rng):
    net = random_net(mlp_arch(2, 2, 1), rng, "m")
    assert [a.id for a in random_augmentations(net, 2)] == ["m~aug0", "m~aug1"]
    assert random_augmentations(net, 2, seed=4) == random_augmentations(net, 2, seed=4)


def test_arch_mismatch(rng):
    a = random_net(mlp_arch(2, 2, 1), rng)
    b = random_net((LayerSpec(2, 3, "tanh"), LayerSpec(3, 1)), rng)
    with pytest.raises(ValueError, match="architecture"):
        orbit_min_distance(a, b)
