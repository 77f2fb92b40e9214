"""Command-line interface.

Subcommands: gen (point clouds), graph (kNN edge lists), cluster (LRD
decomposition), er-oracle (exact vs sketched resistances), train, bench.
Exit codes: 0 ok, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys

from . import bench as bench_mod
from .config import load_config
from .errors import ConfigError, ParseError
from .graph import build_knn, laplacian, load_edges, save_edges
from .lrd import decompose
from .pointcloud import DOMAIN_NAMES, generate, load, save
from .resistance import EXACT_GUARD_N, er_exact, er_krylov

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _build_parser():
    parser = argparse.ArgumentParser(prog="sgm",
                                     description="graph-clustered importance sampling "
                                                 "for PDE network training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a collocation point cloud")
    p.add_argument("--domain", required=True, choices=DOMAIN_NAMES)
    p.add_argument("--n-interior", type=int, required=True)
    p.add_argument("--n-boundary", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", default="uniform", choices=("uniform", "lhs"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("graph", help="build the kNN graph for a cloud")
    p.add_argument("--in", dest="cloud", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--weight-scheme", default="inverse_distance",
                   choices=("inverse_distance", "inverse_square"))
    p.add_argument("--features", default="all", choices=("all", "spatial"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("cluster", help="bounded-resistance-diameter clustering")
    p.add_argument("--graph", required=True)
    p.add_argument("--er", default="krylov", choices=("krylov", "exact"))
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("er-oracle", help="dump exact vs sketched edge resistances")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train with the configured sampler mode")
    p.add_argument("--config", required=True)

    p = sub.add_parser("bench", help="compare sampler modes")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=0,
                   help="process pool size for method x seed runs (0 = serial)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args) -> int:
    if args.command == "gen":
        pc = generate(args.domain, args.n_interior, args.n_boundary, args.seed,
                      method=args.method)
        save(pc, args.out)
        print(f"wrote {pc.n} points to {args.out}")
        return EXIT_OK

    if args.command == "graph":
        pc = load(args.cloud)
        features = pc.schema.spatial_dims if args.features == "spatial" else None
        g = build_knn(pc, features, args.k, args.weight_scheme)
        save_edges(g, args.out)
        print(f"wrote {g.n_edges} edges over {g.n} nodes to {args.out}")
        return EXIT_OK

    if args.command == "cluster":
        g = load_edges(args.graph)
        lap = laplacian(g)
        er = er_exact(lap) if args.er == "exact" else er_krylov(lap, seed=args.seed)
        clustering = decompose(g, er, args.levels, args.budget)
        with open(args.out, "w") as fh:
            fh.write("node_id,cluster_id\n")
            for node, cid in enumerate(clustering.assignment):
                fh.write(f"{node},{cid}\n")
        print(f"wrote {clustering.n_clusters} clusters over {g.n} nodes to {args.out}")
        return EXIT_OK

    if args.command == "er-oracle":
        g = load_edges(args.graph)
        if g.n > EXACT_GUARD_N:
            raise ConfigError(f"er-oracle needs n <= {EXACT_GUARD_N} for the exact side")
        lap = laplacian(g)
        exact = er_exact(lap)
        sketch = er_krylov(lap, seed=args.seed)
        with open(args.out, "w") as fh:
            fh.write("p q r_exact r_krylov\n")
            for p, q, re_, rk in zip(g.edges_p, g.edges_q, exact.r_est, sketch.r_est):
                fh.write(f"{p} {q} {float(re_)!r} {float(rk)!r}\n")
        print(f"wrote {g.n_edges} resistance pairs to {args.out}")
        return EXIT_OK

    if args.command == "train":
        cfg = load_config(args.config)
        result = bench_mod.run(cfg)
        print(f"manifest: {result['manifest']}")
        return EXIT_DIVERGED if result["diverged"] else EXIT_OK

    if args.command == "bench":
        cfg = load_config(args.config)
        report = bench_mod.bench(cfg, workers=args.workers)
        _print_report(report)
        dnf = any(v == "DNF" for row in report.time_matrix.values() for v in row.values())
        return EXIT_DIVERGED if dnf else EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


def _print_report(report):
    print("method   " + "  ".join(f"{m:>12s}" for m in report.methods))
    for out in report.outputs:
        vals = [report.min_errors[m][out][0] for m in report.methods]
        print(f"min_{out:<5s}" + "  ".join(f"{v:12.4g}" for v in vals))
    for m in report.methods:
        for out in report.outputs:
            s = report.speedups[m][out]
            if s is not None and m != report.methods[0]:
                print(f"speedup {m} vs {report.methods[0]} on {out}: {s:.2f}x")


if __name__ == "__main__":
    sys.exit(main())
