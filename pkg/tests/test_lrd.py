import numpy as np
import pytest

from conftest import edges_graph, random_connected_graph
from sgm.graph import build_knn, laplacian
from sgm.lrd import Clustering, decompose, default_diam_budget, verify_diameter
from sgm.pointcloud import generate
from sgm import resistance as rm


def path4():
    g = edges_graph(5, [0, 1, 2, 3], [1, 2, 3, 4], np.ones(4))
    return g, rm.er_exact(laplacian(g))


def test_path_of_four_unit_edges_budget_one():
    """With exactly tied resistances the (r, p, q) tie rule merges (0,1) then
    (2,3) in the first level, and no later merge fits the budget of 1.0
    (any join would accumulate 1 + 1 + 0 > 1). Enumerating every greedy
    contraction order shows all of them respect the bound; the tie rule picks
    this particular one."""
    g, _ = path4()
    exact_ties = rm.EdgeResistances(g, np.ones(4), "exact")
    c = decompose(g, exact_ties, levels=10, diam_budget=1.0)
    assert (c.diam_est <= 1.0 + 1e-12).all()
    groups = {frozenset(m.tolist()) for m in c.members}
    assert groups == {frozenset({0, 1}), frozenset({2, 3}), frozenset({4})}
    diam = verify_diameter(c, laplacian(g))
    assert (diam <= 1.0 + 1e-9).all()


def test_path_of_four_bound_holds_with_computed_resistances():
    g, er = path4()
    c = decompose(g, er, levels=10, diam_budget=1.0)
    assert (c.diam_est <= 1.0 + 1e-12).all()
    assert (verify_diameter(c, laplacian(g)) <= 1.0 + 1e-9).all()
    assert c.n_clusters == 3


def test_budget_zero_gives_singletons():
    g, er = path4()
    c = decompose(g, er, levels=5, diam_budget=0.0)
    assert c.n_clusters == g.n
    assert (c.sizes == 1).all()
    assert (verify_diameter(c, laplacian(g)) == 0).all()


def test_missing_edge_resistance_errors():
    g, er = path4()
    other = edges_graph(5, [0, 1, 2], [1, 2, 3], np.ones(3))
    er_other = rm.er_exact(laplacian(other))
    with pytest.raises(ValueError, match=r"\(3, 4\)"):
        decompose(g, er_other, levels=1, diam_budget=1.0)


def test_partition_is_total_and_consistent():
    rng = np.random.default_rng(0)
    g = random_connected_graph(rng, n_hi=200)
    er = rm.er_exact(laplacian(g))
    c = decompose(g, er, levels=4)
    seen = np.zeros(g.n, dtype=int)
    for cid, members in enumerate(c.members):
        assert len(members) > 0
        assert (c.assignment[members] == cid).all()
        seen[members] += 1
    assert (seen == 1).all()
    assert c.sizes.sum() == g.n


def test_estimated_diameter_respects_budget():
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = random_connected_graph(rng, n_hi=200)
        budget = default_diam_budget(g) * rng.uniform(0.5, 3.0)
        er = rm.er_krylov(laplacian(g), seed=0)
        c = decompose(g, er, levels=8, diam_budget=budget)
        assert (c.diam_est <= budget + 1e-12).all()


def test_exact_er_keeps_true_diameter_within_budget():
    """Accumulated-sum diameters upper-bound true diameters when edge
    resistances are exact (triangle inequality of the resistance metric)."""
    rng = np.random.default_rng(2)
    for _ in range(8):
        g = random_connected_graph(rng, n_hi=160)
        lap = laplacian(g)
        budget = default_diam_budget(g)
        c = decompose(g, rm.er_exact(lap), levels=10, diam_budget=budget)
        diam = verify_diameter(c, lap)
        assert (diam <= budget + 1e-9).all()


def test_krylov_er_diameters_near_budget():
    rng = np.random.default_rng(3)
    fracs = []
    for _ in range(8):
        g = random_connected_graph(rng, n_hi=160)
        lap = laplacian(g)
        budget = default_diam_budget(g)
        c = decompose(g, rm.er_krylov(lap, seed=0), levels=10, diam_budget=budget)
        diam = verify_diameter(c, lap)
        fracs.append((diam <= 1.25 * budget).mean())
    assert min(fracs) >= 0.95


def test_levels_monotonicity():
    rng = np.random.default_rng(4)
    g = random_connected_graph(rng, n_hi=200)
    er = rm.er_exact(laplacian(g))
    budget = default_diam_budget(g) * 2
    previous = np.inf
    for levels in (1, 2, 4, 8, 16):
        c = decompose(g, er, levels=levels, diam_budget=budget)
        assert c.n_clusters <= previous
        previous = c.n_clusters


def test_levels_used_stops_when_no_merge_applies():
    g, er = path4()
    c = decompose(g, er, levels=50, diam_budget=1.0)
    assert c.levels_used < 50


def test_verify_diameter_guard():
    n = rm.EXACT_GUARD_N + 1
    g = edges_graph(n, np.arange(n - 1), np.arange(1, n), np.ones(n - 1))
    c = Clustering(np.zeros(n, dtype=np.int64), [np.arange(n)], np.array([0.0]), 1)
    with pytest.raises(ValueError, match="dense oracle"):
        verify_diameter(c, laplacian(g))


def test_default_budget_is_inverse_average_degree():
    pc = generate("unit-square", 200, 10, seed=0)
    g = build_knn(pc, k=4)
    assert default_diam_budget(g) == pytest.approx(g.n / (2 * g.n_edges))


def test_singleton_clusters_have_zero_exact_diameter():
    g, _ = path4()
    c = Clustering(np.arange(5), [np.array([i]) for i in range(5)], np.zeros(5), 0)
    assert (verify_diameter(c, laplacian(g)) == 0).all()
