"""PDE problem definitions, residual/loss assembly, and the training loop.

Problems expose residual operators built from network jets, Dirichlet
boundary conditions per boundary piece, and a reference solution (analytic
closure or finite-difference cavity fields) for error measurement.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import take, vmean
from .cavity import solve_cavity
from .errors import ConfigError
from .network import JetValue, Network, Optimizer, forward, forward_jet, jet_first, jet_second, param_grad, step

PI = math.pi


class AnalyticJetSource:
    """Closed-form solution exposing the same jet interface as a network.

    value_fn(X) -> (B, d_out); deriv_fns maps a direction tuple (i,) or an
    ordered pair (i, j) to a function X -> (B, d_out).
    """

    def __init__(self, value_fn, deriv_fns, out_dim=1):
        self.value_fn = value_fn
        self.deriv_fns = deriv_fns
        self.out_dim = out_dim

    def forward(self, x):
        return self.value_fn(np.atleast_2d(x))

    def forward_jet(self, x, directions):
        xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
        directions = tuple(directions)
        value = self.value_fn(xb)
        first = {d: self.deriv_fns[(d,)](xb) for d in directions}
        second = {}
        for a, i in enumerate(directions):
            for j in directions[a:]:
                key = (i, j) if (i, j) in self.deriv_fns else (j, i)
                second[(i, j)] = self.deriv_fns[key](xb)
        return JetValue(value, first, second, directions)


@dataclass(frozen=True)
class LossReport:
    total: float
    interior_terms: tuple  # weighted, one per residual operator
    boundary_terms: tuple  # weighted, one per boundary piece
    iteration: int = -1
    wall_time: float = 0.0

    def __post_init__(self):
        recomputed = sum(self.interior_terms) + sum(self.boundary_terms)
        if abs(recomputed - self.total) > 1e-10 * max(1.0, abs(self.total)):
            raise ValueError("loss terms do not sum to the reported total")

    @property
    def interior(self) -> float:
        return float(sum(self.interior_terms))

    @property
    def boundary(self) -> float:
        return float(sum(self.boundary_terms))


class Problem:
    """Base: subclasses define residual operators and boundary data."""

    name: str
    domain: str
    out_names: tuple
    error_outputs: tuple
    jet_directions: tuple = (0, 1)
    n_interior_ops: int = 1
    n_boundary_pieces: int = 2

    def __init__(self, w_interior: float = 1.0, w_boundary: float = 100.0):
        if w_interior < 0 or w_boundary < 0:
            raise ConfigError("loss weights must be >= 0")
        self.w_interior = w_interior
        self.w_boundary = w_boundary

    @property
    def out_dim(self) -> int:
        return len(self.out_names)

    def interior_residuals(self, jets: JetValue, x: np.ndarray) -> list:
        raise NotImplementedError

    def boundary_values(self, x: np.ndarray, piece: int) -> np.ndarray:
        """Dirichlet data g for the given boundary piece, shape (B, out_dim)."""
        raise NotImplementedError

    def analytic_source(self):
        return None

    def reference_on_grid(self, resolution: int):
        raise NotImplementedError


def _col(arr, c):
    return take(arr, (slice(None), c))


class Poisson2D(Problem):
    """Laplacian forcing chosen so sin(pi x) sin(pi y) is the exact solution."""

    name = "poisson2d"
    domain = "unit-square"
    out_names = ("u",)
    error_outputs = ("u",)

    def forcing(self, x):
        return -2.0 * PI**2 * np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def interior_residuals(self, jets, x):
        lap = _col(jet_second(jets, 0, 0), 0) + _col(jet_second(jets, 1, 1), 0)
        return [lap - self.forcing(x)]

    def boundary_values(self, x, piece):
        return np.zeros((len(x), 1))

    def exact(self, x):
        return (np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]))[:, None]

    def analytic_source(self):
        s = lambda x: np.sin(PI * x)  # noqa: E731
        c = lambda x: np.cos(PI * x)  # noqa: E731
        return AnalyticJetSource(
            self.exact,
            {
                (0,): lambda X: (PI * c(X[:, 0]) * s(X[:, 1]))[:, None],
                (1,): lambda X: (PI * s(X[:, 0]) * c(X[:, 1]))[:, None],
                (0, 0): lambda X: (-PI**2 * s(X[:, 0]) * s(X[:, 1]))[:, None],
                (1, 1): lambda X: (-PI**2 * s(X[:, 0]) * s(X[:, 1]))[:, None],
                (0, 1): lambda X: (PI**2 * c(X[:, 0]) * c(X[:, 1]))[:, None],
            },
        )

    def reference_on_grid(self, resolution):
        g = np.linspace(0.0, 1.0, resolution)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return [("u", pts, self.exact(pts)[:, 0])]


class Poisson2DParam(Poisson2D):
    """Parameterized family: solution sin(a pi x) sin(a pi y), a as a feature."""

    name = "poisson2d_param"
    domain = "unit-square-param"
    param_slices = (0.75, 0.875, 1.0)

    def forcing(self, x):
        a = x[:, 2]
        return -2.0 * (a * PI) ** 2 * np.sin(a * PI * x[:, 0]) * np.sin(a * PI * x[:, 1])

    def boundary_values(self, x, piece):
        return self.exact(x)

    def exact(self, x):
        a = x[:, 2]
        return (np.sin(a * PI * x[:, 0]) * np.sin(a * PI * x[:, 1]))[:, None]

    def analytic_source(self):
        def d(i):
            def fn(X):
                a = X[:, 2]
                other = 1 - i
                return (a * PI * np.cos(a * PI * X[:, i]) * np.sin(a * PI * X[:, other]))[:, None]
            return fn

        def d2(i):
            def fn(X):
                a = X[:, 2]
                return (-((a * PI) ** 2) * np.sin(a * PI * X[:, 0]) * np.sin(a * PI * X[:, 1]))[:, None]
            return fn

        def dxy(X):
            a = X[:, 2]
            return ((a * PI) ** 2 * np.cos(a * PI * X[:, 0]) * np.cos(a * PI * X[:, 1]))[:, None]

        return AnalyticJetSource(
            self.exact,
            {(0,): d(0), (1,): d(1), (0, 0): d2(0), (1, 1): d2(1), (0, 1): dxy},
        )

    def reference_on_grid(self, resolution):
        g = np.linspace(0.0, 1.0, resolution)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        out = []
        for a in self.param_slices:
            pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, a)])
            out.append((f"u[a={a}]", pts, self.exact(pts)[:, 0]))
        return out


class LidCavity(Problem):
    """Steady incompressible cavity flow at Re=100 with a unit moving lid."""

    name = "ldc_lite"
    domain = "unit-square"
    out_names = ("u", "v", "p")
    error_outputs = ("u", "v")
    n_interior_ops = 3
    reynolds = 100.0

    @property
    def viscosity(self):
        return 1.0 / self.reynolds

    def interior_residuals(self, jets, x):
        nu = self.viscosity
        u = _col(jets.value, 0)
        v = _col(jets.value, 1)
        ux, vx, px = (_col(jet_first(jets, 0), c) for c in range(3))
        uy, vy, py = (_col(jet_first(jets, 1), c) for c in range(3))
        uxx = _col(jet_second(jets, 0, 0), 0)
        uyy = _col(jet_second(jets, 1, 1), 0)
        vxx = _col(jet_second(jets, 0, 0), 1)
        vyy = _col(jet_second(jets, 1, 1), 1)
        mom_x = u * ux + v * uy + px - nu * (uxx + uyy)
        mom_y = u * vx + v * vy + py - nu * (vxx + vyy)
        cont = ux + vy
        return [mom_x, mom_y, cont]

    def boundary_values(self, x, piece):
        g = np.zeros((len(x), 3))
        if piece == 1:  # moving lid
            g[:, 0] = 1.0
        return g

    def boundary_components(self):
        # pressure is not constrained on boundaries
        return (0, 1)

    def reference_on_grid(self, resolution):
        n = 129 if resolution > 65 else 65
        sol = solve_cavity(self.reynolds, n)
        xx, yy = np.meshgrid(sol["x"], sol["y"], indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return [("u", pts, sol["u"].ravel()), ("v", pts, sol["v"].ravel())]


_PROBLEMS = {p.name: p for p in (Poisson2D, Poisson2DParam, LidCavity)}


def get_problem(name: str, **kwargs) -> Problem:
    if name not in _PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; expected one of {sorted(_PROBLEMS)}")
    return _PROBLEMS[name](**kwargs)


def residual(problem: Problem, source, x: np.ndarray) -> np.ndarray:
    """Interior residuals as a (B, n_ops) array; `source` is any jet provider."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    jets = source.forward_jet(x, problem.jet_directions) if hasattr(source, "forward_jet") \
        else forward_jet(source, x, problem.jet_directions)
    rs = problem.interior_residuals(jets, x)
    cols = [np.asarray(ad._val(r)).reshape(len(x)) for r in rs]
    out = np.column_stack(cols)
    if not np.isfinite(out).all():
        bad = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0])
        raise FloatingPointError(f"non-finite residual at point {x[bad].tolist()}")
    return out


def _boundary_piece_residuals(problem, value, x, piece):
    g = problem.boundary_values(x, piece)
    comps = problem.boundary_components() if hasattr(problem, "boundary_components") \
        else tuple(range(problem.out_dim))
    return [_col(value, c) - g[:, c] for c in comps]


def _interior_loss_pieces(problem, source, x):
    """Per-operator residuals (as taped values when source is taped)."""
    jets = source.forward_jet(x, problem.jet_directions) if hasattr(source, "forward_jet") \
        else forward_jet(source, x, problem.jet_directions)
    return problem.interior_residuals(jets, x)


def per_point_loss(problem: Problem, net, x: np.ndarray) -> np.ndarray:
    """Interior importance score: weighted squared residual sum per point."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rs = _interior_loss_pieces(problem, net, x)
    total = np.zeros(len(x))
    for r in rs:
        total += problem.w_interior * np.asarray(ad._val(r)).reshape(len(x)) ** 2
    return total


def batch_loss(problem: Problem, source, interior_x: np.ndarray, boundary: dict,
               iteration: int = -1, want_per_point: bool = False):
    """Monte-Carlo loss over one batch.

    boundary maps piece index -> (B_j, M) array. Returns (loss, report) or
    (loss, report, per_point). When `source` is a taped handle the returned
    loss is a Var suitable for param_grad; otherwise a float.
    """
    interior_x = np.atleast_2d(interior_x)
    if len(interior_x) == 0:
        raise ValueError("interior batch is empty")
    rs = _interior_loss_pieces(problem, source, interior_x)
    interior_terms = []
    per_point = np.zeros(len(interior_x)) if want_per_point else None
    loss = None
    for r in rs:
        sq = r * r
        term = vmean(sq) * problem.w_interior
        interior_terms.append(float(ad._val(term)))
        loss = term if loss is None else loss + term
        if want_per_point:
            per_point += problem.w_interior * np.asarray(ad._val(sq)).reshape(len(interior_x))

    boundary_terms = []
    for piece in sorted(boundary):
        xb = np.atleast_2d(boundary[piece])
        if len(xb) == 0:
            boundary_terms.append(0.0)
            continue
        value = source.forward(xb) if hasattr(source, "forward") else forward(source, xb)
        comps = _boundary_piece_residuals(problem, value, xb, piece)
        piece_sq = None
        for rc in comps:
            sq = rc * rc
            piece_sq = sq if piece_sq is None else piece_sq + sq
        term = vmean(piece_sq) * problem.w_boundary
        boundary_terms.append(float(ad._val(term)))
        loss = term if loss is None else loss + term

    report = LossReport(float(ad._val(loss)), tuple(interior_terms), tuple(boundary_terms),
                        iteration=iteration)
    if want_per_point:
        return loss, report, per_point
    return loss, report


def reference_error(net, problem: Problem, grid_resolution: int = 101) -> dict:
    """Relative L2 error of the network against the problem reference.

    Parameterized problems report one entry per parameter slice plus the
    per-output mean.
    """
    if grid_resolution < 16:
        raise ValueError("grid_resolution must be >= 16")
    entries = problem.reference_on_grid(grid_resolution)
    errors = {}
    slice_groups = {}
    for label, pts, ref in entries:
        pred_all = forward(net, pts) if isinstance(net, Network) else net.forward(pts)
        base = label.split("[")[0]
        col = problem.out_names.index(base)
        pred = np.asarray(pred_all)[:, col]
        denom = np.linalg.norm(ref)
        err = float(np.linalg.norm(pred - ref) / denom) if denom > 0 else float(np.linalg.norm(pred))
        errors[label] = err
        slice_groups.setdefault(base, []).append(err)
    for base, errs in slice_groups.items():
        errors[base] = float(np.mean(errs))
    return errors


@dataclass
class Trajectory:
    columns: list
    rows: list = field(default_factory=list)
    diverged: bool = False

    def record(self, **kv):
        self.rows.append([kv.get(c) for c in self.columns])

    def last(self) -> dict:
        return dict(zip(self.columns, self.rows[-1])) if self.rows else {}

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows], dtype=np.float64)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join("" if v is None else repr(v) for v in row) + "\n")


def _boundary_groups(problem, cloud):
    groups = {}
    for piece in range(problem.n_boundary_pieces):
        idx = cloud.boundary_indices(piece)
        if len(idx):
            groups[piece] = cloud.data[idx]
    return groups


def train(problem: Problem, net: Network, cloud, sampler, optimizer: Optimizer, *,
          steps: int, eval_every: int = 0, boundary_batch: int = 64, seed: int = 0,
          abort_loss: float = 1e6, eval_resolution: int = 101,
          record_initial: bool = False) -> Trajectory:
    """SGD training loop: interior batches come from the sampler, boundary
    batches are drawn uniformly. Wall time excludes evaluation.

    The sampler is handed a per-point interior loss closure before the first
    iteration (its probe budget, refresh cadence and epoch assembly are its
    own business). Divergence aborts and returns the trajectory so far.
    """
    interior_idx = cloud.interior_indices()
    interior_pts = cloud.data[interior_idx]
    boundary = _boundary_groups(problem, cloud)
    rng = np.random.default_rng(seed)

    if hasattr(sampler, "set_loss_fn"):
        sampler.set_loss_fn(lambda idx: per_point_loss(problem, net, interior_pts[idx]))

    columns = ["iteration", "wall_time_s", "loss_total", "loss_interior", "loss_boundary"] \
        + [f"err_{o}" for o in problem.error_outputs]
    traj = Trajectory(columns)

    def evaluate(iteration, wall, report):
        errs = reference_error(net, problem, eval_resolution)
        row = {
            "iteration": iteration, "wall_time_s": wall,
            "loss_total": report.total if report else None,
            "loss_interior": report.interior if report else None,
            "loss_boundary": report.boundary if report else None,
        }
        for o in problem.error_outputs:
            row[f"err_{o}"] = errs[o]
        traj.record(**row)

    if record_initial:
        evaluate(0, 0.0, None)

    sizes = {p: len(x) for p, x in boundary.items()}
    total_b = sum(sizes.values())
    quota = {p: max(1, round(boundary_batch * s / total_b)) for p, s in sizes.items()}

    wall = 0.0
    report = None
    for t in range(steps):
        t0 = time.perf_counter()
        batch_idx = sampler.next_batch()
        xb = interior_pts[batch_idx]
        bb = {}
        for piece, pts in boundary.items():
            k = min(quota[piece], len(pts))
            sel = rng.choice(len(pts), size=k, replace=False)
            bb[piece] = pts[sel]

        def closure(handle):
            loss, rep = batch_loss(problem, handle, xb, bb, iteration=t)
            closure.report = rep
            return loss

        try:
            loss_val, grads = param_grad(net, closure)
        except FloatingPointError:
            traj.diverged = True
            break
        report = closure.report
        if not np.isfinite(loss_val) or loss_val > abort_loss:
            traj.diverged = True
            wall += time.perf_counter() - t0
            evaluate(t + 1, wall, report)
            break
        step(optimizer, net, grads)
        wall += time.perf_counter() - t0

        if eval_every and (t + 1) % eval_every == 0:
            evaluate(t + 1, wall, report)

    if not traj.diverged and (not traj.rows or traj.rows[-1][0] != steps):
        evaluate(steps, wall, report)
    return traj
