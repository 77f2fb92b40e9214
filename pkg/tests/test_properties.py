"""Property-based checks over the data-layer invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from sgm.pointcloud import FeatureSchema, PointCloud, load, save
from sgm.sampler import score_and_map

finite_floats = st.floats(min_value=-1e12, max_value=1e12,
                          allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(finite_floats, finite_floats), min_size=1, max_size=40),
       st.sampled_from(["interior", "boundary0", "boundary1"]))
@settings(max_examples=60, deadline=None)
def test_cloud_roundtrip_arbitrary_floats(tmp_path_factory, rows, tag):
    data = np.array(rows, dtype=np.float64)
    lo = data.min(axis=0) - 1
    hi = data.max(axis=0) + 1
    schema = FeatureSchema(("x", "y"), (0, 1), (), ((lo[0], hi[0]), (lo[1], hi[1])))
    cloud = PointCloud(schema, data, np.array([tag] * len(rows), dtype=object))
    path = tmp_path_factory.mktemp("clouds") / "c.csv"
    save(cloud, path)
    back = load(path)
    assert np.array_equal(back.data, cloud.data)
    assert (back.tags == cloud.tags).all()


@given(st.lists(st.floats(min_value=0, max_value=1e6, allow_nan=False), min_size=1,
                max_size=30))
@settings(max_examples=100, deadline=None)
def test_score_map_range_and_monotonicity(scores):
    table = score_and_map(np.array(scores), None, (0.05, 0.8))
    frac = table.sampling_fraction
    assert (frac >= 0.05 - 1e-12).all() and (frac <= 0.8 + 1e-12).all()
    order = np.argsort(table.combined_score, kind="stable")
    assert (np.diff(frac[order]) >= -1e-12).all()


@given(st.integers(min_value=2, max_value=25), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=50, deadline=None)
def test_knn_graph_invariants_random_clouds(n_extra, seed):
    from sgm.graph import knn_edges

    rng = np.random.default_rng(seed)
    pts = rng.random((5 + n_extra, 2))
    k = int(rng.integers(1, min(6, len(pts) - 1) + 1))
    g = knn_edges(pts, k)
    assert (g.edges_p < g.edges_q).all()
    assert (g.weights > 0).all()
    assert abs(g.adjacency - g.adjacency.T).max() == 0.0
    assert (g.degrees() >= k).all()
