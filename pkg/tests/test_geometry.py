import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weightaudit.geometry import (
    freedman_diaconis_edges,
    freedman_diaconis_width,
    heatmap_rows,
    histogram,
    histogram_intersection,
    nn_distances,
    pairwise_distance_summary,
    pca2,
    per_parameter_stats,
    sample_flat_indices,
)
from weightaudit.model import LayerSpec, Network
from weightaudit.symmetry import LayerAction, apply_action

from conftest import make_set, mlp_arch, random_net


def vec_net(vec, id):
    arch = (LayerSpec(len(vec) - 1, 1),)
    v = np.asarray(vec, dtype=np.float32)
    return Network(arch, (v[:-1].reshape(1, -1),), (v[-1:],), id)


def test_exclude_self_pairs(rng):
    a, b = random_net(mlp_arch(2, 3, 1), rng, "a"), random_net(mlp_arch(2, 3, 1), rng, "b")
    recs = nn_distances(make_set([a, b]), make_set([a, b]), exclude_self=True)
    assert [(r.query_id, r.nearest_id) for r in recs] == [("a", "b"), ("b", "a")]


def test_byte_copy_is_distance_zero(rng):
    train = [random_net(mlp_arch(2, 3, 1), rng, f"t{i}") for i in range(4)]
    gen = make_set([train[2].with_id("g")])
    (rec,) = nn_distances(gen, make_set(train))
    assert rec.distance == 0.0 and rec.nearest_id == "t2"


def test_matches_linear_scan():
    rng = np.random.default_rng(0)
    refs = [vec_net(rng.normal(size=10), f"r{i}") for i in range(3)]
    q = vec_net(rng.normal(size=10), "q")
    best = min(
        (sum((float(x) - float(y)) ** 2 for x, y in zip(q.flatten(), r.flatten())) ** 0.5, r.id) for r in refs
    )
    (rec,) = nn_distances(make_set([q]), make_set(refs))
    assert abs(rec.distance - best[0]) <= 1e-12
    assert rec.nearest_id == best[1]


def test_nn_tie_goes_to_lowest_index():
    z = vec_net(np.zeros(4), "q")
    refs = [vec_net([1, 0, 0, 0], "r0"), vec_net([0, 1, 0, 0], "r1")]
    (rec,) = nn_distances(make_set([z]), make_set(refs))
    assert rec.nearest_id == "r0"


def test_symmetric_nn_finds_permuted_copy(rng):
    t = random_net(mlp_arch(2, 3, 1), rng, "t")
    other = random_net(mlp_arch(2, 3, 1), rng, "u")
    g = apply_action(t, [LayerAction(0, (2, 1, 0), (True, False, False))]).with_id("g")
    (plain,) = nn_distances(make_set([g]), make_set([other, t]), "none")
    (ex,) = nn_distances(make_set([g]), make_set([other, t]), "exhaustive")
    assert plain.distance > 0
    assert ex.distance == 0.0 and ex.nearest_id == "t"


def test_histogram_fixed_edges():
    h = histogram([1, 2, 3], [0, 2, 4])
    assert h.counts.tolist() == [1, 2]


def test_histogram_last_edge_inclusive():
    assert histogram([0, 4], [0, 2, 4]).counts.tolist() == [1, 1]


def test_histogram_single_value():
    h = histogram([2.5])
    assert h.counts.tolist() == [1]
    assert h.edges[0] <= 2.5 <= h.edges[1]


def test_histogram_out_of_range_edges():
    with pytest.raises(ValueError, match="outside"):
        histogram([5.0], [0, 1])


def test_fd_width_formula():
    v = np.random.default_rng(0).standard_normal(1000)
    q75, q25 = np.percentile(v, [75, 25])
    expected = 2.0 * (q75 - q25) * 1000 ** (-1 / 3)
    assert abs(freedman_diaconis_width(v) - expected) <= np.spacing(expected)
    edges = freedman_diaconis_edges(v)
    np.testing.assert_allclose(np.diff(edges), expected, rtol=1e-12)
    assert edges[0] == v.min() and edges[-1] >= v.max()


def test_fd_degenerate_iqr_falls_back():
    v = np.array([0.0] * 50 + [1.0])
    edges = freedman_diaconis_edges(v)
    assert edges[0] == 0 and edges[-1] == 1
    assert histogram(v).counts.sum() == 51


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=200))
def test_histogram_conserves_count(values):
    h = histogram(values)
    assert h.counts.sum() == len(values)
    assert np.all(np.diff(h.edges) > 0)


def test_histogram_intersection_bounds():
    e = [0, 1, 2]
    a, b = histogram([0.5, 0.5], e), histogram([1.5], e)
    assert histogram_intersection(a, b) == 0.0
    assert histogram_intersection(a, a) == 1.0


def test_parameter_stats_single_member(rng):
    net = random_net(mlp_arch(2, 3, 1), rng)
    st_ = per_parameter_stats(make_set([net]))
    np.testing.assert_array_equal(st_.mean, net.flatten())
    assert not st_.std.any()


def test_parameter_stats_hand_values():
    a, b = vec_net([0, 0, 0], "a"), vec_net([2, 0, 0], "b")
    s = per_parameter_stats(make_set([a, b]), [0])
    assert s.mean[0] == 1.0 and s.std[0] == np.sqrt(2.0)
    with pytest.raises(IndexError):
        per_parameter_stats(make_set([a, b]), [3])


def test_pairwise_summary():
    x, y = vec_net([0, 0, 0], "x"), vec_net([3, 0, 0], "y")
    assert pairwise_distance_summary(make_set([x]), make_set([y])) == (3.0, 3.0)
    s = make_set([x])
    with pytest.raises(ValueError, match="no pairs"):
        pairwise_distance_summary(s, s)


def test_pca_axis_aligned():
    X = np.array([[-2.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 0.1]])
    comps, _ = pca2(X)
    np.testing.assert_allclose(comps[0], [1, 0], atol=1e-12)


def test_pca_explained_variance_vs_eig():
    X = np.array([[1.0, 2.0, 0.5], [2.0, 0.0, 1.0], [0.0, 1.0, 3.0], [3.0, 3.0, 0.0], [1.5, 0.5, 2.0]])
    comps, proj = pca2(X)
    evals = np.sort(np.linalg.eigvalsh(np.cov(X.T)))[::-1][:2]
    np.testing.assert_allclose(proj.var(axis=0, ddof=1), evals, rtol=1e-12)
    np.testing.assert_allclose(comps @ comps.T, np.eye(2), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pca_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3)) * [3.0, 1.5, 0.3]
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    c1, p1 = pca2(X)
    c2, p2 = pca2(X @ Q.T)
    s = np.sign(np.sum((c1 @ Q.T) * c2, axis=1))
    np.testing.assert_allclose(c1 @ Q.T * s[:, None], c2, atol=1e-8)
    np.testing.assert_allclose(p1 * s, p2, atol=1e-8)


def test_pca_rejects_degenerate():
    with pytest.raises(ValueError):
        pca2(np.ones((4, 2)))


def test_heatmap_rows(rng):
    train = make_set([random_net(mlp_arch(2, 3, 1), rng, f"t{i}") for i in range(5)])
    q = random_net(mlp_arch(2, 3, 1), rng, "q")
    idx = sample_flat_indices(13, 4, seed=1)
    rows = heatmap_rows(q, train, idx, tag="p50")
    groups = sorted({r[0] for r in rows})
    assert len(rows) == 16 and len(groups) == 4
    assert "p50/query/q" in groups
    assert sample_flat_indices(13, 4, seed=1).tolist() == idx.tolist()
