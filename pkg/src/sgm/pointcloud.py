"""Collocation point clouds: generation over named domains, tagging, CSV persistence.

A cloud is an N x M sample matrix plus a per-point tag saying whether the point
lies in the domain interior or on one of the boundary pieces (``boundary0``,
``boundary1``, ...). Parameterized domains carry the design parameter as an
extra feature column drawn uniformly from its interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

TAG_INTERIOR = "interior"
BOUNDARY_TOL = 1e-12

# Fixed outer radius of the annular channel; the inner radius is the parameter.
ANNULUS_OUTER_RADIUS = 2.0


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of a cloud: names, spatial/parameter roles, per-feature bounds."""

    names: tuple[str, ...]
    spatial_dims: tuple[int, ...]
    param_dims: tuple[int, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        m = len(self.names)
        if set(self.spatial_dims) & set(self.param_dims):
            raise ValueError("spatial_dims and param_dims overlap")
        for i in (*self.spatial_dims, *self.param_dims):
            if not 0 <= i < m:
                raise ValueError(f"feature index {i} out of range for {m} features")
        if len(self.bounds) != m:
            raise ValueError("one bounds pair required per feature")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid bounds ({lo}, {hi})")

    @property
    def n_features(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class PointCloud:
    schema: FeatureSchema
    data: np.ndarray  # (N, M) float64
    tags: np.ndarray  # (N,) of str
    domain: str | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != self.schema.n_features:
            raise ValueError("data shape does not match schema")
        if self.data.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if len(self.tags) != self.data.shape[0]:
            raise ValueError("one tag required per point")
        lo = np.array([b[0] for b in self.schema.bounds])
        hi = np.array([b[1] for b in self.schema.bounds])
        if (self.data < lo - BOUNDARY_TOL).any() or (self.data > hi + BOUNDARY_TOL).any():
            raise ValueError("points fall outside schema bounds")
        self.data.setflags(write=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(self.tags == TAG_INTERIOR)

    def boundary_indices(self, j: int | None = None) -> np.ndarray:
        if j is None:
            return np.flatnonzero(self.tags != TAG_INTERIOR)
        return np.flatnonzero(self.tags == f"boundary{j}")

    def subset(self, indices: np.ndarray) -> "PointCloud":
        return PointCloud(self.schema, self.data[indices].copy(), self.tags[indices], self.domain)


DOMAIN_NAMES = ("unit-square", "unit-square-param", "annulus-lite")

_SQUARE_PARAM_INTERVAL = (0.5, 2.0)
_ANNULUS_PARAM_INTERVAL = (0.75, 1.1)


def _schema_for(domain: str) -> FeatureSchema:
    if domain == "unit-square":
        return FeatureSchema(("x", "y"), (0, 1), (), ((0.0, 1.0), (0.0, 1.0)))
    if domain == "unit-square-param":
        return FeatureSchema(
            ("x", "y", "a"), (0, 1), (2,),
            ((0.0, 1.0), (0.0, 1.0), _SQUARE_PARAM_INTERVAL),
        )
    if domain == "annulus-lite":
        r = ANNULUS_OUTER_RADIUS
        return FeatureSchema(
            ("x", "y", "ri"), (0, 1), (2,),
            ((-r, r), (-r, r), _ANNULUS_PARAM_INTERVAL),
        )
    raise ConfigError(f"unknown domain {domain!r}; expected one of {', '.join(DOMAIN_NAMES)}")


def boundary_predicates(domain: str):
    """Per-constraint predicate functions f(row) -> bool, indexed by boundary tag j.

    For the squares, piece 0 is the bottom/left/right walls and piece 1 the top
    edge (kept separate so a moving-lid condition can target it). For the
    annulus, piece 0 is the inner circle and piece 1 the outer circle.
    """
    if domain in ("unit-square", "unit-square-param"):
        def walls(row):
            x, y = row[0], row[1]
            return min(abs(x), abs(x - 1.0), abs(y)) <= BOUNDARY_TOL

        def lid(row):
            return abs(row[1] - 1.0) <= BOUNDARY_TOL

        return (walls, lid)
    if domain == "annulus-lite":
        def inner(row):
            return abs(np.hypot(row[0], row[1]) - row[2]) <= BOUNDARY_TOL

        def outer(row):
            return abs(np.hypot(row[0], row[1]) - ANNULUS_OUTER_RADIUS) <= BOUNDARY_TOL

        return (inner, outer)
    raise ConfigError(f"unknown domain {domain!r}; expected one of {', '.join(DOMAIN_NAMES)}")


def _strict_open_unit(rng: np.random.Generator, size) -> np.ndarray:
    # rng.random() can return 0.0; redraw so interior points are strictly inside.
    u = rng.random(size)
    while True:
        on_edge = u == 0.0
        if not on_edge.any():
            return u
        u[on_edge] = rng.random(int(on_edge.sum()))


def generate(domain: str, n_interior: int, n_boundary: int, seed: int,
             method: str = "uniform") -> PointCloud:
    """Draw a tagged collocation cloud over a named domain.

    Interior points are i.i.d. uniform over the domain (``method="lhs"``
    switches to a Latin hypercube for the square domains). Boundary points are
    placed on the boundary pieces and tagged ``boundary{j}``. Deterministic for
    a fixed seed.
    """
    if n_interior < 1 or n_boundary < 1:
        raise ConfigError("n_interior and n_boundary must be >= 1")
    if method not in ("uniform", "lhs"):
        raise ConfigError(f"unknown sampling method {method!r}")
    schema = _schema_for(domain)
    rng = np.random.default_rng(seed)

    if domain in ("unit-square", "unit-square-param"):
        interior, btags, bpoints = _generate_square(domain, schema, n_interior, n_boundary, rng, method)
    else:
        interior, btags, bpoints = _generate_annulus(schema, n_interior, n_boundary, rng)

    data = np.vstack([interior, bpoints])
    tags = np.concatenate([np.full(n_interior, TAG_INTERIOR, dtype=object), btags])
    return PointCloud(schema, data, np.asarray(tags, dtype=object), domain)


def _generate_square(domain, schema, n_interior, n_boundary, rng, method):
    param = domain == "unit-square-param"
    if method == "lhs":
        from scipy.stats import qmc

        dim = 3 if param else 2
        xy = qmc.LatinHypercube(d=dim, seed=rng).random(n_interior)
        xy[xy == 0.0] = 0.5 / n_interior
    else:
        xy = _strict_open_unit(rng, (n_interior, 3 if param else 2))
    if param:
        lo, hi = _SQUARE_PARAM_INTERVAL
        xy[:, 2] = lo + (hi - lo) * xy[:, 2]
    interior = xy

    # Perimeter-proportional split: three walls vs. the lid.
    n_lid = max(1, round(n_boundary / 4))
    n_walls = n_boundary - n_lid
    if n_walls < 1:
        n_walls, n_lid = 1, n_boundary - 1
    t = rng.random(n_walls) * 3.0  # arc-length position along bottom, left, right
    wx = np.empty(n_walls)
    wy = np.empty(n_walls)
    seg0 = t < 1.0
    seg1 = (t >= 1.0) & (t < 2.0)
    seg2 = t >= 2.0
    wx[seg0], wy[seg0] = t[seg0], 0.0
    wx[seg1], wy[seg1] = 0.0, t[seg1] - 1.0
    wx[seg2], wy[seg2] = 1.0, t[seg2] - 2.0
    lx = rng.random(n_lid)
    cols = [np.concatenate([wx, lx]), np.concatenate([wy, np.ones(n_lid)])]
    if param:
        lo, hi = _SQUARE_PARAM_INTERVAL
        cols.append(lo + (hi - lo) * rng.random(n_walls + n_lid))
    bpoints = np.column_stack(cols)
    btags = np.array(["boundary0"] * n_walls + ["boundary1"] * n_lid, dtype=object)
    return interior, btags, bpoints


def _generate_annulus(schema, n_interior, n_boundary, rng):
    lo, hi = _ANNULUS_PARAM_INTERVAL
    r_out = ANNULUS_OUTER_RADIUS
    ri = lo + (hi - lo) * rng.random(n_interior)
    # Area-uniform radius conditional on each point's own inner radius.
    u = _strict_open_unit(rng, n_interior)
    rad = np.sqrt(ri**2 + u * (r_out**2 - ri**2))
    theta = rng.random(n_interior) * 2 * np.pi
    interior = np.column_stack([rad * np.cos(theta), rad * np.sin(theta), ri])

    rib = lo + (hi - lo) * rng.random(n_boundary)
    inner = rng.random(n_boundary) < rib / (rib + r_out)  # circumference-proportional
    if not inner.any():
        inner[0] = True
    if inner.all():
        inner[-1] = False
    brad = np.where(inner, rib, r_out)
    btheta = rng.random(n_boundary) * 2 * np.pi
    bpoints = np.column_stack([brad * np.cos(btheta), brad * np.sin(btheta), rib])
    btags = np.where(inner, "boundary0", "boundary1").astype(object)
    return interior, btags, bpoints


def save(pc: PointCloud, path) -> None:
    """Write a cloud as CSV with ``#`` metadata lines. Floats use shortest
    round-trip repr so load() recovers the matrix bit-exactly."""
    path = Path(path)
    lines = [f"# features: {','.join(pc.schema.names)}"]
    if pc.domain:
        lines.append(f"# domain: {pc.domain}")
    lines.append(f"# spatial: {','.join(map(str, pc.schema.spatial_dims))}")
    lines.append(f"# param: {','.join(map(str, pc.schema.param_dims))}")
    lines.append("# bounds: " + ",".join(f"{float(lo)!r}:{float(hi)!r}" for lo, hi in pc.schema.bounds))
    lines.append(",".join([*pc.schema.names, "tag"]))
    for row, tag in zip(pc.data, pc.tags):
        lines.append(",".join([*(repr(float(v)) for v in row), str(tag)]))
    path.write_text("\n".join(lines) + "\n")


def load(path) -> PointCloud:
    """Parse a cloud CSV written by save(). Raises ParseError with the
    offending line number on malformed input."""
    text = Path(path).read_text()
    lines = text.splitlines()
    names = None
    domain = None
    spatial = param = bounds = None
    body_start = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            meta = stripped[1:].strip()
            if meta.startswith("features:"):
                names = tuple(s.strip() for s in meta[len("features:"):].split(",") if s.strip())
            elif meta.startswith("domain:"):
                domain = meta[len("domain:"):].strip()
            elif meta.startswith("spatial:"):
                body = meta[len("spatial:"):].strip()
                spatial = tuple(int(s) for s in body.split(",")) if body else ()
            elif meta.startswith("param:"):
                body = meta[len("param:"):].strip()
                param = tuple(int(s) for s in body.split(",")) if body else ()
            continue
        body_start = i
        break
    if names is None:
        raise ParseError("no header")
    if body_start is None:
        raise ParseError("no data rows")

    m = len(names)
    header = [c.strip() for c in lines[body_start].split(",")]
    if header != [*names, "tag"]:
        raise ParseError(f"column header {header} does not match declared features", line=body_start + 1)

    rows = []
    tags = []
    for i in range(body_start + 1, len(lines)):
        stripped = lines[i].strip()
        if not stripped:
            continue
        cells = stripped.split(",")
        if len(cells) != m + 1:
            raise ParseError(f"expected {m + 1} columns, found {len(cells)}", line=i + 1)
        try:
            rows.append([float(c) for c in cells[:m]])
        except ValueError as exc:
            raise ParseError(str(exc), line=i + 1) from None
        tags.append(cells[m])
    if not rows:
        raise ParseError("no data rows")

    data = np.array(rows, dtype=np.float64)
    if spatial is None:
        spatial = tuple(range(m))
    if param is None:
        param = ()
    # Bounds metadata is optional on load; fall back to the data envelope.
    bnds = _parse_bounds(lines, m) or tuple(
        (float(c.min()), float(c.max())) for c in data.T
    )
    schema = FeatureSchema(tuple(names), spatial, param, bnds)
    return PointCloud(schema, data, np.asarray(tags, dtype=object), domain)


def _parse_bounds(lines, m):
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#") and stripped[1:].strip().startswith("bounds:"):
            body = stripped[1:].strip()[len("bounds:"):].strip()
            pairs = [p for p in body.split(",") if p]
            if len(pairs) != m:
                raise ParseError(f"bounds metadata lists {len(pairs)} features, expected {m}")
            return tuple((float(p.split(":")[0]), float(p.split(":")[1])) for p in pairs)
    return None
