"""Pipeline assembly for single runs, and the multi-method benchmark.

A single run: cloud -> (for cluster modes) graph/resistance/clusters ->
sampler -> trainer, with every artifact written under the run directory and
hashed into a manifest. The benchmark fans runs out over (method x seed),
aggregates seed-averaged error curves, and reports minimum errors plus the
cross-method time-to-threshold matrix (blank where a target was never
reached, DNF where a run diverged).
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig
from .graph import build_knn, laplacian, rebuild_with_outputs
from .lrd import decompose
from .network import Network, Optimizer, forward, init_network, save_checkpoint
from .pde import Trajectory, get_problem, train
from .pointcloud import generate, load
from .resistance import er_krylov
from .sampler import make_sampler


def _build_cloud(cfg: RunConfig, problem):
    cloud_cfg = cfg["cloud"]
    if cloud_cfg.get("path"):
        return load(cloud_cfg["path"])
    return generate(problem.domain, cloud_cfg["n_interior"], cloud_cfg["n_boundary"],
                    cloud_cfg["seed"], method=cloud_cfg["method"])


def _graph_features(cfg: RunConfig, cloud):
    if cfg["graph"]["features"] == "spatial":
        return cloud.schema.spatial_dims
    return (*cloud.schema.spatial_dims, *cloud.schema.param_dims)


def build_pipeline(cfg: RunConfig, mode: str, seed: int, net: Network):
    """Sampler over the interior points, with cluster machinery when needed."""
    problem = get_problem(cfg["problem"], w_interior=cfg["loss_weights"]["interior"],
                          w_boundary=cfg["loss_weights"]["boundary"])
    cloud = _build_cloud(cfg, problem)
    interior = cloud.subset(cloud.interior_indices())
    scfg = cfg.sampler_config_for(mode, seed)

    clustering = None
    rebuild_fn = None
    if mode in ("sgm", "sgm_s"):
        features = _graph_features(cfg, interior)
        gcfg = cfg["graph"]
        lcfg = cfg["lrd"]

        def make_clusters(outputs=None, er_seed=seed):
            if outputs is None:
                g = build_knn(interior, features, gcfg["k"], gcfg["weight_scheme"])
            else:
                g = rebuild_with_outputs(interior, outputs, features, gcfg["k"],
                                         gcfg["weight_scheme"])
            er = er_krylov(laplacian(g), seed=er_seed)
            return decompose(g, er, lcfg["levels"], lcfg["diam_budget"])

        clustering = make_clusters()
        state = {"rebuilds": 0}

        def rebuild_fn():
            state["rebuilds"] += 1
            outputs = np.asarray(forward(net, interior.data))
            return make_clusters(outputs, er_seed=seed + 1000 * state["rebuilds"])

    sampler = make_sampler(interior.data, scfg, clustering, rebuild_fn,
                           background=cfg["background"])
    return problem, cloud, sampler


def run_single(cfg: RunConfig, mode: str, seed: int, out_dir=None):
    """One full training run; returns (trajectory, artifact paths)."""
    ncfg = cfg["network"]
    problem = get_problem(cfg["problem"])
    net = init_network(
        _in_dim_for(cfg["problem"]), ncfg["width"], ncfg["depth"],
        len(problem.out_names), seed=seed + ncfg["seed"], encoder=ncfg["encoder"],
    )
    problem, cloud, sampler = build_pipeline(cfg, mode, seed, net)
    ocfg = cfg["optimizer"]
    opt = Optimizer(kind=ocfg["kind"], lr=ocfg["lr"], decay=ocfg["decay"],
                    decay_every=ocfg["decay_every"])
    traj = train(problem, net, cloud, sampler, opt,
                 steps=cfg["steps"], eval_every=cfg["eval_every"],
                 boundary_batch=cfg["boundary_batch"], seed=seed,
                 eval_resolution=cfg["eval_resolution"])
    artifacts = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"trajectory_{mode}_seed{seed}.csv"
        traj.to_csv(csv_path)
        ckpt_path = out_dir / f"checkpoint_{mode}_seed{seed}.npz"
        save_checkpoint(net, ckpt_path)
        artifacts = [csv_path, ckpt_path]
    return traj, artifacts


def _in_dim_for(problem_name: str) -> int:
    return 3 if problem_name == "poisson2d_param" else 2


def _run_task(args):
    cfg_raw, mode, seed, out_dir = args
    traj, artifacts = run_single(RunConfig(cfg_raw), mode, seed, out_dir)
    return mode, seed, traj.columns, traj.rows, traj.diverged, [str(p) for p in artifacts]


@dataclass
class BenchReport:
    methods: list
    outputs: list
    min_errors: dict  # method -> output -> (mean, std or None)
    time_matrix: dict  # (target_method, output) -> method -> seconds | None | "DNF"
    speedups: dict  # method -> output -> ratio vs methods[0], or None
    n_seeds: int


def run(cfg: RunConfig) -> dict:
    """CLI `train`: every configured seed for the configured sampler mode."""
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = cfg["sampler"]["mode"]
    artifacts = []
    diverged = False
    for seed in cfg["seeds"]:
        traj, files = run_single(cfg, mode, seed, out_dir)
        artifacts.extend(files)
        diverged = diverged or traj.diverged
    manifest = write_manifest(cfg, out_dir, artifacts)
    return {"diverged": diverged, "manifest": manifest, "artifacts": artifacts}


def bench(cfg: RunConfig, workers: int = 0) -> BenchReport:
    """Run every (method x seed), aggregate, and emit report + plots."""
    methods = cfg["methods"]
    if len(methods) < 2:
        raise ValueError("bench needs at least 2 methods to compare")
    seeds = cfg["seeds"]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [(cfg.raw, m, s, str(out_dir)) for m in methods for s in seeds]
    results = {}
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for mode, seed, cols, rows, div, files in pool.map(_run_task, tasks):
                t = Trajectory(cols, rows, div)
                results[(mode, seed)] = (t, files)
    else:
        for task in tasks:
            mode, seed, cols, rows, div, files = _run_task(task)
            results[(mode, seed)] = (Trajectory(cols, rows, div), files)

    problem = get_problem(cfg["problem"])
    outputs = list(problem.error_outputs)
    report = _aggregate(methods, seeds, outputs, results)

    artifacts = [Path(f) for _, files in results.values() for f in files]
    artifacts.append(_write_report_files(report, cfg, out_dir))
    for out in outputs:
        artifacts.append(_plot_curves(results, methods, seeds, out, out_dir, x_axis="wall_time_s"))
        artifacts.append(_plot_curves(results, methods, seeds, out, out_dir, x_axis="iteration"))
    write_manifest(cfg, out_dir, artifacts)
    return report


def _mean_curves(trajs, output):
    """Seed-averaged error and wall-time curves on the shared eval grid."""
    n_eval = min(len(t.rows) for t in trajs)
    errs = np.stack([t.column(f"err_{output}")[:n_eval] for t in trajs])
    walls = np.stack([t.column("wall_time_s")[:n_eval] for t in trajs])
    iters = trajs[0].column("iteration")[:n_eval]
    return iters, walls.mean(axis=0), errs.mean(axis=0)


def _aggregate(methods, seeds, outputs, results) -> BenchReport:
    min_errors = {}
    curves = {}
    dnf = {}
    for m in methods:
        trajs = [results[(m, s)][0] for s in seeds]
        dnf[m] = any(t.diverged for t in trajs)
        min_errors[m] = {}
        for out in outputs:
            mins = [float(t.column(f"err_{out}").min()) for t in trajs if t.rows]
            mean = float(np.mean(mins))
            std = float(np.std(mins)) if len(mins) > 1 else None
            min_errors[m][out] = (mean, std)
            curves[(m, out)] = _mean_curves(trajs, out)

    time_matrix = {}
    for target_m in methods:
        for out in outputs:
            _, _, target_curve = curves[(target_m, out)]
            target = float(target_curve.min())
            row = {}
            for m in methods:
                if dnf[m]:
                    row[m] = "DNF"
                    continue
                iters, wall, err = curves[(m, out)]
                hit = np.flatnonzero(err <= target)
                row[m] = float(wall[hit[0]]) if len(hit) else None
            time_matrix[(target_m, out)] = row

    baseline = methods[0]
    speedups = {}
    for m in methods:
        speedups[m] = {}
        for out in outputs:
            row = time_matrix[(baseline, out)]
            t_base = row.get(baseline)
            t_m = row.get(m)
            if isinstance(t_base, float) and isinstance(t_m, float) and t_m > 0:
                speedups[m][out] = t_base / t_m
            else:
                speedups[m][out] = None
    return BenchReport(list(methods), list(outputs), min_errors, time_matrix,
                       speedups, len(seeds))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


def _write_report_files(report: BenchReport, cfg: RunConfig, out_dir: Path) -> Path:
    rows = []
    header = ["row"] + report.methods
    for out in report.outputs:
        rows.append([f"min_{out}"] + [_fmt(report.min_errors[m][out][0]) for m in report.methods])
        stds = [report.min_errors[m][out][1] for m in report.methods]
        if any(s is not None for s in stds):
            rows.append([f"std_{out}"] + [_fmt(s) for s in stds])
    for target_m in report.methods:
        for out in report.outputs:
            row = report.time_matrix[(target_m, out)]
            rows.append([f"T({target_m}_{out})"] + [_fmt(row[m]) for m in report.methods])
    for out in report.outputs:
        rows.append([f"speedup_{out}_vs_{report.methods[0]}"]
                    + [_fmt(report.speedups[m][out]) for m in report.methods])
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")

    json_path = out_dir / "report.json"
    payload = {
        "methods": report.methods,
        "outputs": report.outputs,
        "n_seeds": report.n_seeds,
        "graph_features_note": "cluster graphs built over spatial+parameter features"
        if cfg["graph"]["features"] == "all" else "cluster graphs built over spatial features only",
        "min_errors": {m: {o: {"mean": report.min_errors[m][o][0],
                               "std": report.min_errors[m][o][1]}
                           for o in report.outputs} for m in report.methods},
        "time_to_threshold": {f"{tm}_{o}": report.time_matrix[(tm, o)]
                              for tm in report.methods for o in report.outputs},
        "speedups_vs_baseline": report.speedups,
    }
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _plot_curves(results, methods, seeds, output, out_dir: Path, x_axis: str) -> Path:
    """Self-contained SVG: seed-averaged error curves per method, log-y."""
    width, height, pad = 640, 420, 56
    series = []
    for idx, m in enumerate(methods):
        trajs = [results[(m, s)][0] for s in seeds]
        n_eval = min(len(t.rows) for t in trajs)
        if n_eval == 0:
            continue
        errs = np.stack([t.column(f"err_{output}")[:n_eval] for t in trajs]).mean(axis=0)
        if x_axis == "iteration":
            xs = trajs[0].column("iteration")[:n_eval]
        else:
            xs = np.stack([t.column(x_axis)[:n_eval] for t in trajs]).mean(axis=0)
        series.append((m, xs, np.maximum(errs, 1e-12), _PALETTE[idx % len(_PALETTE)]))

    x_max = max(s[1].max() for s in series) or 1.0
    y_lo = min(np.log10(s[2].min()) for s in series)
    y_hi = max(np.log10(s[2].max()) for s in series)
    if y_hi - y_lo < 1e-9:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad + (width - 2 * pad) * x / x_max

    def sy(e):
        return height - pad - (height - 2 * pad) * (np.log10(e) - y_lo) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
        f'<text x="{width/2}" y="{height-12}" font-size="13" text-anchor="middle">'
        f'{"iteration" if x_axis == "iteration" else "wall time (s)"}</text>',
        f'<text x="16" y="{height/2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {height/2})">relative L2 error ({output}), log scale</text>',
    ]
    for t in range(5):
        xv = x_max * t / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{height-pad+16}" font-size="10" '
                     f'text-anchor="middle">{xv:.3g}</text>')
    for e in range(int(np.floor(y_lo)), int(np.ceil(y_hi)) + 1):
        if y_lo <= e <= y_hi:
            parts.append(f'<text x="{pad-6}" y="{sy(10.0**e):.1f}" font-size="10" '
                         f'text-anchor="end">1e{e}</text>')
    for i, (m, xs, errs, color) in enumerate(series):
        pts = " ".join(f"{sx(x):.1f},{sy(e):.1f}" for x, e in zip(xs, errs))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = pad + 16 * i
        parts.append(f'<line x1="{width-pad-110}" y1="{ly}" x2="{width-pad-86}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width-pad-80}" y="{ly+4}" font-size="11">{m}</text>')
    parts.append("</svg>")
    path = out_dir / f"error_{output}_vs_{'iter' if x_axis == 'iteration' else 'wall'}.svg"
    path.write_text("\n".join(parts))
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(cfg: RunConfig, out_dir: Path, artifacts) -> Path:
    config_json = cfg.to_json()
    manifest = {
        "created_unix": time.time(),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "config": cfg.raw,
        "config_sha256": hashlib.sha256(config_json.encode()).hexdigest(),
        "artifacts": [
            {"path": str(Path(p).name), "sha256": _sha256(p)}
            for p in artifacts
        ],
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
