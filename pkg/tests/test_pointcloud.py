import numpy as np
import pytest

from sgm.errors import ConfigError, ParseError
from sgm import pointcloud as pc
from sgm.pointcloud import FeatureSchema, PointCloud, boundary_predicates, generate, load, save


def test_generate_determinism():
    a = generate("unit-square", 500, 100, seed=7)
    b = generate("unit-square", 500, 100, seed=7)
    assert np.array_equal(a.data, b.data)
    assert (a.tags == b.tags).all()


def test_generate_different_seeds_differ():
    a = generate("unit-square", 100, 20, seed=0)
    b = generate("unit-square", 100, 20, seed=1)
    assert not np.array_equal(a.data, b.data)


def test_unit_square_small():
    cloud = generate("unit-square", 4, 4, seed=0)
    interior = cloud.data[cloud.interior_indices()]
    assert interior.shape == (4, 2)
    assert (interior > 0).all() and (interior < 1).all()
    bpts = cloud.data[cloud.boundary_indices()]
    assert len(bpts) == 4
    on_edge = (np.isclose(bpts, 0.0, atol=1e-12) | np.isclose(bpts, 1.0, atol=1e-12)).any(axis=1)
    assert on_edge.all()


def test_param_square_bounds():
    cloud = generate("unit-square-param", 100, 40, seed=1)
    assert cloud.schema.names == ("x", "y", "a")
    assert cloud.schema.param_dims == (2,)
    a = cloud.data[:, 2]
    assert (a >= 0.5).all() and (a <= 2.0).all()
    interior = cloud.data[cloud.interior_indices()]
    assert len(interior) == 100


def test_full_scale_count_accepted_by_schema():
    # 8M-point configurations are schema-valid; desk tests never generate them.
    schema = FeatureSchema(("x", "y"), (0, 1), (), ((0.0, 1.0), (0.0, 1.0)))
    data = np.full((3, 2), 0.5)
    cloud = PointCloud(schema, data, np.array(["interior"] * 3, dtype=object))
    assert cloud.n == 3


@pytest.mark.parametrize("domain", ["unit-square", "unit-square-param", "annulus-lite"])
def test_boundary_tags_satisfy_predicates(domain):
    cloud = generate(domain, 200, 120, seed=3)
    preds = boundary_predicates(domain)
    for j, pred in enumerate(preds):
        idx = cloud.boundary_indices(j)
        assert len(idx) >= 1
        for row in cloud.data[idx]:
            assert pred(row)


def test_annulus_interior_inside_channel():
    cloud = generate("annulus-lite", 300, 50, seed=2)
    interior = cloud.data[cloud.interior_indices()]
    rad = np.hypot(interior[:, 0], interior[:, 1])
    assert (rad > interior[:, 2]).all()
    assert (rad < pc.ANNULUS_OUTER_RADIUS).all()


def test_unknown_domain_is_config_error():
    with pytest.raises(ConfigError):
        generate("moebius", 10, 10, seed=0)


def test_lhs_method():
    cloud = generate("unit-square", 64, 8, seed=5, method="lhs")
    interior = cloud.data[cloud.interior_indices()]
    # LHS stratifies each axis: every 1/64 stripe holds exactly one point
    for dim in range(2):
        strata = np.floor(interior[:, dim] * 64).astype(int)
        assert len(np.unique(strata)) == 64


def test_coverage_of_grid_cells():
    """With >= 1000 interior points, all 16 cells of a 4x4 grid are hit for
    every one of 100 seeds (empty-cell probability is ~e^-62 per cell)."""
    misses = 0
    for seed in range(100):
        cloud = generate("unit-square", 1000, 4, seed=seed)
        interior = cloud.data[cloud.interior_indices()]
        cells = np.floor(interior * 4).clip(0, 3).astype(int)
        occupied = set(map(tuple, cells))
        if len(occupied) < 16:
            misses += 1
    assert misses == 0


def test_save_load_roundtrip_bitexact(tmp_path):
    cloud = generate("unit-square-param", 157, 43, seed=11)
    path = tmp_path / "cloud.csv"
    save(cloud, path)
    back = load(path)
    assert np.array_equal(cloud.data, back.data)
    assert (back.tags == cloud.tags).all()
    assert back.schema == cloud.schema
    assert back.domain == cloud.domain


def test_load_arity_mismatch_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# features: x,y\nx,y,tag\n0.1,0.2,interior\n0.1,0.2,0.3,interior\n")
    with pytest.raises(ParseError) as err:
        load(path)
    assert err.value.line == 4


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError, match="no header"):
        load(path)


def test_load_bad_float_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# features: x,y\nx,y,tag\n0.1,zap,interior\n")
    with pytest.raises(ParseError) as err:
        load(path)
    assert err.value.line == 3


def test_schema_invariants():
    with pytest.raises(ValueError):
        FeatureSchema(("x",), (0,), (0,), ((0.0, 1.0),))  # overlapping roles
    with pytest.raises(ValueError):
        FeatureSchema(("x",), (1,), (), ((0.0, 1.0),))  # index out of range
    with pytest.raises(ValueError):
        FeatureSchema(("x",), (0,), (), ((1.0, 0.0),))  # inverted bounds


def test_points_outside_bounds_rejected():
    schema = FeatureSchema(("x",), (0,), (), ((0.0, 1.0),))
    with pytest.raises(ValueError):
        PointCloud(schema, np.array([[2.0]]), np.array(["interior"], dtype=object))
