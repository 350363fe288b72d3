import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spajm.basis import (
    AdjacencyGraph,
    EffectBlock,
    apply_sum_to_zero,
    bspline_basis,
    bspline_knots,
    difference_penalty,
    lattice_graph,
    matrix_rank,
    mrf_design,
    mrf_penalty,
    random_effect_design,
    read_gra,
    write_gra,
)


def cox_de_boor(x, t, degree):
    """Textbook recursion, one basis function at a time."""
    n = len(t) - degree - 1

    def B(i, k, xv):
        if k == 0:
            return 1.0 if t[i] <= xv < t[i + 1] else 0.0
        left = 0.0 if t[i + k] == t[i] else (xv - t[i]) / (t[i + k] - t[i]) * B(i, k - 1, xv)
        right = 0.0 if t[i + k + 1] == t[i + 1] else (t[i + k + 1] - xv) / (t[i + k + 1] - t[i + 1]) * B(i + 1, k - 1, xv)
        return left + right

    return np.array([[B(i, degree, xv) for i in range(n)] for xv in x])


def path_graph(labels):
    nb = [set() for _ in labels]
    for i in range(len(labels) - 1):
        nb[i].add(i + 1)
        nb[i + 1].add(i)
    return AdjacencyGraph(tuple(labels), tuple(frozenset(s) for s in nb))


def brute_laplacian(S, edges):
    K = np.zeros((S, S))
    for a, b in edges:
        K[a, a] += 1
        K[b, b] += 1
        K[a, b] -= 1
        K[b, a] -= 1
    return K


# ---------------------------------------------------------------- B-splines


def test_degree_zero_is_bin_indicator():
    edges = np.linspace(0, 1, 5)
    mids = 0.5 * (edges[:-1] + edges[1:])
    B = bspline_basis(mids, knots=4, degree=0, bounds=(0, 1))
    np.testing.assert_array_equal(B, np.eye(4))


def test_degree_one_hat_functions_at_knots():
    t = bspline_knots(0.0, 1.0, 6, 1)
    grid = t[1:-1]
    B = bspline_basis(grid, knots=6, degree=1, bounds=(0, 1))
    np.testing.assert_allclose(B, np.eye(6), atol=1e-14)


def test_matches_cox_de_boor():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 3, 40)
    for degree, k in [(1, 5), (2, 7), (3, 10)]:
        B = bspline_basis(x, knots=k, degree=degree)
        t = bspline_knots(x.min(), x.max(), k, degree)
        ref = cox_de_boor(x[(x > x.min()) & (x < x.max())], t, degree)
        np.testing.assert_allclose(B[(x > x.min()) & (x < x.max())], ref, atol=1e-12)


def test_partition_of_unity_1000_points():
    x = np.random.default_rng(1).uniform(-5, 5, 1000)
    B = bspline_basis(x, knots=10, degree=3)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12
    assert np.all(B >= 0)


@settings(max_examples=50, deadline=None)
@given(
    degree=st.integers(0, 4),
    extra=st.integers(2, 12),
    seed=st.integers(0, 2**31),
)
def test_partition_of_unity_property(degree, extra, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, 50)
    B = bspline_basis(x, knots=degree + extra, degree=degree, bounds=(-1, 1))
    assert B.shape == (50, degree + extra)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12


def test_bspline_errors():
    with pytest.raises(ValueError):
        bspline_basis([0.0, np.nan], knots=6, degree=3)
    with pytest.raises(ValueError):
        bspline_basis([0.0, 1.0], knots=4, degree=3)


# ---------------------------------------------------------------- penalties


def test_difference_penalty_examples():
    np.testing.assert_array_equal(difference_penalty(2, 1), [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(difference_penalty(3, 1), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    K = difference_penalty(5, 2)
    assert matrix_rank(K) == 3
    np.testing.assert_allclose(K @ np.ones(5), 0, atol=1e-12)
    np.testing.assert_allclose(K @ np.arange(1, 6), 0, atol=1e-12)
    with pytest.raises(ValueError):
        difference_penalty(2, 2)


@settings(max_examples=40, deadline=None)
@given(J=st.integers(3, 25), d=st.sampled_from([1, 2]))
def test_difference_penalty_null_space(J, d):
    K = difference_penalty(J, d)
    s = np.linalg.svd(K, compute_uv=False)
    assert np.sum(s <= 1e-8 * s.max()) == d
    np.testing.assert_allclose(K, K.T)


def test_penalties_psd_random_quadratic_forms():
    rng = np.random.default_rng(2)
    mats = [difference_penalty(12, 2), difference_penalty(8, 1), mrf_penalty(lattice_graph(4, 5)), np.eye(7)]
    for K in mats:
        g = rng.normal(size=(1000, K.shape[0]))
        q = np.einsum("ij,jk,ik->i", g, K, g)
        assert np.all(q >= -1e-12 * np.sum(g * g, axis=1))
        np.linalg.cholesky(K + 1e-10 * np.eye(K.shape[0]))


def test_mrf_path_and_components():
    np.testing.assert_array_equal(mrf_penalty(path_graph("ABC")), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    g = AdjacencyGraph(tuple("ABCD"), (frozenset({1}), frozenset({0}), frozenset({3}), frozenset({2})))
    assert matrix_rank(mrf_penalty(g)) == 2
    assert g.n_components() == 2


def test_mrf_three_by_three_lattice():
    K = mrf_penalty(lattice_graph(3, 3))
    # neighbour counts enumerated cell by cell
    counts = []
    for r, c in itertools.product(range(3), range(3)):
        counts.append(sum(0 <= r + dr < 3 and 0 <= c + dc < 3 for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))))
    np.testing.assert_array_equal(np.diag(K), counts)
    np.testing.assert_array_equal(counts, [2, 3, 2, 3, 4, 3, 2, 3, 2])
    np.testing.assert_allclose(K.sum(axis=1), 0)


@settings(max_examples=60, deadline=None)
@given(S=st.integers(1, 12), data=st.data())
def test_mrf_equals_brute_force_laplacian(S, data):
    pairs = [(a, b) for a in range(S) for b in range(a + 1, S)]
    edges = data.draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    nb = [set() for _ in range(S)]
    for a, b in edges:
        nb[a].add(b)
        nb[b].add(a)
    g = AdjacencyGraph(tuple(f"r{i}" for i in range(S)), tuple(frozenset(s) for s in nb))
    K = mrf_penalty(g)
    np.testing.assert_array_equal(K, brute_laplacian(S, edges))
    assert matrix_rank(K) == S - g.n_components()


def test_graph_rejects_asymmetry_and_self_loops():
    with pytest.raises(ValueError):
        AdjacencyGraph(("A", "B"), (frozenset({1}), frozenset()))
    with pytest.raises(ValueError):
        AdjacencyGraph(("A",), (frozenset({0}),))


def test_gra_round_trip_and_asymmetric_rejected(tmp_path):
    g = lattice_graph(3, 4)
    p = tmp_path / "m.gra"
    write_gra(g, p)
    back = read_gra(p)
    assert back.labels == g.labels and back.neighbors == g.neighbors
    assert write_gra(back) == p.read_text()
    with pytest.raises(ValueError):
        read_gra("2\nA\n1\n1\nB\n0\n\n")
    with pytest.raises(ValueError):
        read_gra("1\nA\n2\n0\n")


# ---------------------------------------------------------------- designs


def test_random_effect_design_examples():
    np.testing.assert_array_equal(random_effect_design([1, 1, 2]), [[1, 0], [1, 0], [0, 1]])
    np.testing.assert_array_equal(random_effect_design([1, 1, 2], [0, 0.5, 0]), [[0, 0], [0.5, 0], [0, 0]])
    np.testing.assert_array_equal(random_effect_design([1]), [[1]])
    with pytest.raises(ValueError):
        random_effect_design([1, 5], n_subjects=2)


def test_mrf_design_examples():
    g = path_graph("AB")
    np.testing.assert_array_equal(mrf_design(["A", "B", "A"], g), [[1, 0], [0, 1], [1, 0]])
    assert mrf_design([], g).shape == (0, 2)
    with pytest.raises(KeyError):
        mrf_design(["Z"], g)


# ---------------------------------------------------------------- constraints


def test_sum_to_zero_projects_out_constants():
    x = np.random.default_rng(3).uniform(0, 1, 60)
    Z = bspline_basis(x, knots=8, degree=3)
    blk = apply_sum_to_zero(EffectBlock(Z, difference_penalty(8, 2), kind="pspline"))
    assert blk.Z.shape[1] == 7
    # a constant effect has no representation left
    const = Z @ np.ones(8)
    np.testing.assert_allclose(blk.project_effect(const), 0, atol=1e-10)
    rng = np.random.default_rng(4)
    for _ in range(20):
        g = rng.normal(size=7)
        back = blk.constraint.to_original(g)
        assert abs(np.mean(Z @ back)) < 1e-10


def test_sum_to_zero_mrf_path_full_rank():
    g = path_graph("ABC")
    Z = mrf_design(list("ABCABC"), g)
    blk = apply_sum_to_zero(EffectBlock(Z, mrf_penalty(g), kind="mrf"))
    assert blk.K.shape == (2, 2)
    assert matrix_rank(blk.K) == 2
