"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line
(run with `pytest tests/test_acceptance.py -s` to see them live).

Budgets and expected values here are frozen from baseline runs recorded
during development; seeds are fixed, so every check is reproducible.
"""

import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import random_connected_graph, random_tree
from sgm import bench as bench_mod
from sgm import graph as gm
from sgm import isr as im
from sgm import lrd as lm
from sgm import resistance as rm
from sgm import sampler as sm
from sgm.config import load_config
from sgm.lrd import Clustering
from sgm.network import Network, forward, forward_jet, init_network, jet_second, param_grad
from sgm.pointcloud import generate
from sgm import autodiff as ad

pytestmark = pytest.mark.acceptance


def _report(num, name, ok, detail, elapsed, budget_s):
    status = "PASS" if ok and elapsed < budget_s else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {status} ({detail}; {elapsed:.1f}s of {budget_s:.0f}s budget)")
    assert ok, f"criterion {num} ({name}): {detail}"
    assert elapsed < budget_s, f"criterion {num} exceeded runtime budget ({elapsed:.1f}s)"


def test_criterion_01_er_oracle_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_edge = 0.0
    worst_foster = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 201))
        g = random_tree(rng, n)
        er = rm.er_exact(gm.laplacian(g))
        worst_edge = max(worst_edge, float(np.abs(er.r_est - 1.0 / g.weights).max()))
        worst_foster = max(worst_foster, abs(float((er.r_est * g.weights).sum()) - (n - 1)))
    ok = worst_edge <= 1e-9 and worst_foster <= 1e-6
    _report(1, "ER oracle exactness on trees", ok,
            f"max edge dev {worst_edge:.2e} (<=1e-9), max sum-rule dev {worst_foster:.2e} (<=1e-6)",
            time.perf_counter() - t0, 10.0)


def test_criterion_02_krylov_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    per_graph = []
    for _ in range(20):
        g = random_connected_graph(rng, n_lo=60, n_hi=500, deg_lo=5, deg_hi=20)
        lap = gm.laplacian(g)
        exact = rm.er_exact(lap)
        rhos = [spearmanr(exact.r_est, rm.er_krylov(lap, seed=s).r_est).statistic
                for s in range(5)]
        per_graph.append(float(np.mean(rhos)))
    mean_rho = float(np.mean(per_graph))
    ok = mean_rho >= 0.9
    _report(2, "Krylov ER rank fidelity", ok,
            f"seed-averaged Spearman mean {mean_rho:.3f} (>=0.9), per-graph min {min(per_graph):.3f}",
            time.perf_counter() - t0, 60.0)


def test_criterion_03_lrd_diameter_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    exact_total = exact_ok = 0
    krylov_total = krylov_ok = 0
    for _ in range(20):
        g = random_connected_graph(rng, n_lo=60, n_hi=500, deg_lo=5, deg_hi=20)
        lap = gm.laplacian(g)
        budget = lm.default_diam_budget(g)
        c_exact = lm.decompose(g, rm.er_exact(lap), levels=10, diam_budget=budget)
        d_exact = lm.verify_diameter(c_exact, lap)
        exact_total += c_exact.n_clusters
        exact_ok += int((d_exact <= budget + 1e-9).sum())
        c_kry = lm.decompose(g, rm.er_krylov(lap, seed=0), levels=10, diam_budget=budget)
        d_kry = lm.verify_diameter(c_kry, lap)
        krylov_total += c_kry.n_clusters
        krylov_ok += int((d_kry <= 1.25 * budget).sum())
    frac_kry = krylov_ok / krylov_total
    ok = exact_ok == exact_total and frac_kry >= 0.95
    _report(3, "LRD diameter bound", ok,
            f"exact ERs: {exact_ok}/{exact_total} within budget (need all); "
            f"krylov ERs: {frac_kry:.1%} within 1.25x budget (need >=95%)",
            time.perf_counter() - t0, 120.0)


def test_criterion_04_lrd_near_linear_scaling():
    t0 = time.perf_counter()
    medians = []
    sizes = (25_000, 50_000, 100_000, 200_000)
    for n in sizes:
        pc = generate("unit-square", n, 10, seed=0)
        g = gm.build_knn(pc, k=8)
        er = rm.er_krylov(gm.laplacian(g), seed=0)
        times = []
        for _ in range(5):
            t1 = time.perf_counter()
            lm.decompose(g, er, levels=10)
            times.append(time.perf_counter() - t1)
        medians.append(float(np.median(times)))
    ratios = [medians[i + 1] / medians[i] for i in range(len(sizes) - 1)]
    ok = max(ratios) <= 2.6
    _report(4, "LRD near-linear scaling", ok,
            f"median decomposition times {['%.3fs' % m for m in medians]}, "
            f"per-doubling ratios {['%.2f' % r for r in ratios]} (each <=2.6)",
            time.perf_counter() - t0, 600.0)


def test_criterion_05_isr_spectral_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    pts = rng.random((180, 2))
    lap = gm.laplacian(gm.knn_edges(pts, 6))
    basis, scores = im.isr_compute(lap, lap, r=3)
    identity_dev = float(np.abs(basis.eigvals - 1.0).max())
    scale_devs = []
    for c in (2.0, 5.0):
        ly = gm.laplacian(gm.knn_edges(pts * c, 6))
        _, sc = im.isr_compute(lap, ly, r=3)
        scale_devs.append(abs(sc.isr_max - c) / c)
    ok = identity_dev <= 1e-6 and max(scale_devs) <= 0.02
    _report(5, "ISR spectral identities", ok,
            f"identity spectrum dev {identity_dev:.2e} (<=1e-6), "
            f"scaling rel devs {['%.4f' % d for d in scale_devs]} (<=0.02)",
            time.perf_counter() - t0, 30.0)


def test_criterion_06_isr_gradient_ranking():
    t0 = time.perf_counter()
    x = np.linspace(0.0, 1.0, 60)[:, None]
    cases = [
        ("tanh front", np.tanh(8 * (x[:, 0] - 0.5))),
        ("exp growth", np.exp(2.0 * x[:, 0])),
        ("sine", np.sin(4.0 * x[:, 0])),
    ]
    rhos = []
    for name, f in cases:
        scores = im.node_scores_subset(x, f, k=4, r=3).scores
        grad = np.abs(np.gradient(f, x[:, 0]))
        rhos.append((name, float(spearmanr(scores, grad).statistic)))
    ok = all(r >= 0.5 for _, r in rhos)
    _report(6, "ISR gradient-surrogate ranking", ok,
            "Spearman vs |grad|: " + ", ".join(f"{n}={r:.2f}" for n, r in rhos) + " (each >=0.5)",
            time.perf_counter() - t0, 30.0)


def test_criterion_07_autodiff_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    worst_first = worst_second = 0.0
    for trial in range(100):
        width = int(rng.integers(6, 24))
        depth = int(rng.integers(2, 4))
        net = init_network(2, width, depth, 1, seed=trial)
        x = rng.random((1, 2))
        jet = forward_jet(net, x, (0, 1))
        h1, h2 = 1e-5, 1e-4
        for d in (0, 1):
            e1 = np.zeros(2)
            e1[d] = h1
            fd1 = (forward(net, x + e1) - forward(net, x - e1)) / (2 * h1)
            scale = max(abs(float(fd1[0, 0])), 1e-6)
            worst_first = max(worst_first, abs(float(jet.first[d][0, 0] - fd1[0, 0])) / scale)
            e2 = np.zeros(2)
            e2[d] = h2
            fd2 = (forward(net, x + e2) - 2 * forward(net, x) + forward(net, x - e2)) / h2**2
            scale2 = max(abs(float(fd2[0, 0])), 1e-6)
            worst_second = max(worst_second,
                               abs(float(jet_second(jet, d, d)[0, 0] - fd2[0, 0])) / scale2)

    worst_grad = 0.0
    xb = rng.random((8, 2))
    for trial in range(100):
        net = init_network(2, 10, 3, 1, seed=5000 + trial)

        def loss_fn(handle):
            jet = handle.forward_jet(xb, (0, 1))
            r = jet.second[(0, 0)] + jet.second[(1, 1)] + jet.value
            return ad.vmean(r * r)

        def loss_plain(n2):
            jet = forward_jet(n2, xb, (0, 1))
            r = jet.second[(0, 0)] + jet.second[(1, 1)] + jet.value
            return float(np.mean(r * r))

        _, grads = param_grad(net, loss_fn)
        direction = [(rng.normal(size=w.shape), rng.normal(size=b.shape))
                     for w, b in zip(net.weights, net.biases)]
        h = 1e-6
        plus = Network([w + h * dw for w, (dw, _) in zip(net.weights, direction)],
                       [b + h * db for b, (_, db) in zip(net.biases, direction)])
        minus = Network([w - h * dw for w, (dw, _) in zip(net.weights, direction)],
                        [b - h * db for b, (_, db) in zip(net.biases, direction)])
        fd = (loss_plain(plus) - loss_plain(minus)) / (2 * h)
        analytic = sum(np.sum(gw * dw) + np.sum(gb * db)
                       for (gw, gb), (dw, db) in zip(grads, direction))
        worst_grad = max(worst_grad, abs(fd - analytic) / max(abs(fd), 1e-10))

    ok = worst_first <= 1e-6 and worst_second <= 1e-4 and worst_grad <= 1e-5
    _report(7, "autodiff correctness", ok,
            f"jet-vs-FD rel err: first {worst_first:.2e} (<=1e-6), second {worst_second:.2e} "
            f"(<=1e-4); param-grad directional FD {worst_grad:.2e} (<=1e-5)",
            time.perf_counter() - t0, 60.0)


def test_criterion_08_sampler_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)

    # floor-of-1 coverage over 1000 assembled epochs
    violations = 0
    for _ in range(1000):
        n_c = int(rng.integers(2, 15))
        sizes = rng.integers(2, 40, size=n_c)
        groups, pos = [], 0
        for s in sizes:
            groups.append(np.arange(pos, pos + s))
            pos += s
        assignment = np.zeros(pos, dtype=np.int64)
        for cid, gmembers in enumerate(groups):
            assignment[gmembers] = cid
        clusters = Clustering(assignment, groups, np.zeros(n_c), 1)
        table = sm.score_and_map(rng.random(n_c), None, (0.02, 0.6))
        epoch = sm.assemble_epoch(clusters, table, int(rng.integers(n_c, pos + 1)), rng)
        if epoch.composition.min() < 1:
            violations += 1

    # score-to-fraction monotonicity on randomized tables
    monotone = True
    for _ in range(200):
        scores = rng.random(int(rng.integers(2, 40)))
        table = sm.score_and_map(scores, None, (0.05, 0.7))
        order = np.argsort(table.combined_score)
        if (np.diff(table.sampling_fraction[order]) < -1e-12).any():
            monotone = False

    # probe budget: total fresh loss evaluations per refresh
    n = 600
    groups = np.array_split(np.arange(n), 17)
    assignment = np.zeros(n, dtype=np.int64)
    for cid, gmembers in enumerate(groups):
        assignment[gmembers] = cid
    clusters = Clustering(assignment, list(groups), np.zeros(17), 1)
    cfg = sm.SamplerConfig(mode="sgm", batch_size=16, epoch_target=120,
                           probe_fraction=0.15, tau_e=5, seed=0)
    sampler = sm.ClusterSampler(rng.random((n, 2)), clusters, cfg)
    evals = {"count": 0}

    def loss_fn(idx):
        evals["count"] += len(idx)
        return np.ones(len(idx))

    sampler.set_loss_fn(loss_fn)
    budget = sum(int(np.ceil(0.15 * len(g))) for g in groups) + len(groups)
    budget_ok = True
    for _ in range(20):
        before = evals["count"]
        sampler.next_batch()
        if evals["count"] - before > budget:
            budget_ok = False

    # MIS empirical frequencies within 3 sigma over 1e5 draws
    pts = rng.random((40, 2))
    losses = rng.random(40) + 0.05
    mcfg = sm.SamplerConfig(mode="mis", batch_size=1000, tau_e=10**9,
                            mis_seeds=40, seed=3)
    mis = sm.MISSampler(pts, mcfg)
    mis.set_loss_fn(lambda idx: losses[np.asarray(idx)])
    draws = np.concatenate([mis.next_batch() for _ in range(100)])
    counts = np.bincount(draws, minlength=40)
    expected = mis.prob * len(draws)
    sigma = np.sqrt(len(draws) * mis.prob * (1 - mis.prob))
    mis_ok = bool((np.abs(counts - expected) <= 3 * sigma + 1e-9).all())

    ok = violations == 0 and monotone and budget_ok and mis_ok
    _report(8, "sampler contracts", ok,
            f"floor violations {violations}/1000 (need 0); monotone map {monotone}; "
            f"probe budget respected {budget_ok}; MIS within 3 sigma {mis_ok}",
            time.perf_counter() - t0, 120.0)


# -- end-to-end criteria -----------------------------------------------------
# Budgets and sampler settings below are frozen from the baseline studies
# recorded in the development ledger; seeds are fixed so reruns are bit-exact.

E2E_STEPS = 8000
E2E_SEEDS = (0, 1, 2, 3, 4)

POISSON_CFG = {
    "problem": "poisson2d",
    "cloud": {"n_interior": 20000, "n_boundary": 2000, "seed": 0},
    "steps": E2E_STEPS,
    "eval_every": 250,
    "optimizer": {"kind": "adam", "lr": 1e-3, "decay": 0.8, "decay_every": 1000},
    "sampler": {"batch_size": 256, "tau_e": 700, "tau_g": 2500,
                "probe_fraction": 0.15, "epoch_target": 2500},
    "network": {"width": 32, "depth": 3},
}

# The parameterized comparison runs in the aggressive-concentration regime
# (wide fraction range, small probe) where loss-only ranking over-commits to
# the highest-loss clusters and the stability term hedges the allocation.
PARAM_STEPS = 12000
PARAM_CFG = {
    "problem": "poisson2d_param",
    "cloud": {"n_interior": 20000, "n_boundary": 2000, "seed": 0},
    "steps": PARAM_STEPS,
    "eval_every": 500,
    "optimizer": {"kind": "adam", "lr": 1e-3, "decay": 0.75, "decay_every": 1000},
    "sampler": {"batch_size": 256, "tau_e": 700, "tau_g": 2500,
                "probe_fraction": 0.10, "epoch_target": 5000,
                "p_min": 0.02, "p_max": 0.8},
    "network": {"width": 32, "depth": 3},
}


def _run(base, mode, seed):
    cfg = load_config(overrides=json.loads(json.dumps(base)))
    traj, _ = bench_mod.run_single(cfg, mode, seed)
    assert not traj.diverged
    return traj


def test_criterion_09_end_to_end_poisson():
    t0 = time.perf_counter()
    ratios = []
    uniform_finals = []
    for seed in E2E_SEEDS:
        uni = _run(POISSON_CFG, "uniform", seed)
        target = float(uni.column("err_u")[-1])
        uniform_finals.append(target)
        sgm = _run(POISSON_CFG, "sgm", seed)
        errs = sgm.column("err_u")
        iters = sgm.column("iteration")
        hit = np.flatnonzero(errs <= target)
        ratios.append(float(iters[hit[0]] / E2E_STEPS) if len(hit) else 1.25)
    mean_ratio = float(np.mean(ratios))
    baseline_ok = max(uniform_finals) <= 2e-2
    ok = baseline_ok and mean_ratio <= 1.0
    speedup = 1.0 / mean_ratio if mean_ratio > 0 else float("inf")
    _report(9, "end-to-end poisson2d", ok,
            f"uniform final err_u {['%.4f' % e for e in uniform_finals]} (each <=0.02) in "
            f"{E2E_STEPS} steps; sgm iteration ratios {['%.2f' % r for r in ratios]}, "
            f"mean {mean_ratio:.2f} (<=1.0); measured iteration speedup {speedup:.2f}x "
            f"(reported, not asserted)",
            time.perf_counter() - t0, 2700.0)


def test_criterion_10_parameterized_stability_advantage():
    t0 = time.perf_counter()
    finals = {"sgm": [], "sgm_s": []}
    for seed in E2E_SEEDS:
        for mode in ("sgm", "sgm_s"):
            traj = _run(PARAM_CFG, mode, seed)
            finals[mode].append(float(traj.column("err_u")[-1]))
    mean_sgm = float(np.mean(finals["sgm"]))
    mean_sgms = float(np.mean(finals["sgm_s"]))
    ok = mean_sgms <= mean_sgm
    _report(10, "parameterized stability advantage", ok,
            f"seed-averaged final err_u over 3 parameter slices: sgm_s {mean_sgms:.4f} "
            f"<= sgm {mean_sgm:.4f} (per-seed sgm_s {['%.4f' % e for e in finals['sgm_s']]}, "
            f"sgm {['%.4f' % e for e in finals['sgm']]})",
            time.perf_counter() - t0, 5400.0)


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    overrides = {
        "problem": "poisson2d",
        "cloud": {"n_interior": 1500, "n_boundary": 300, "seed": 0},
        "steps": 150, "eval_every": 50, "eval_resolution": 21,
        "network": {"width": 12, "depth": 2},
        "sampler": {"mode": "sgm", "batch_size": 64, "tau_e": 40, "tau_g": 100,
                    "epoch_target": 300},
        "seeds": [0],
        "background": False,  # single-threaded mode
    }
    texts = []
    for tag in ("a", "b"):
        cfg = load_config(overrides=dict(overrides, out_dir=str(tmp_path / tag)))
        bench_mod.run(cfg)
        texts.append((tmp_path / tag / "trajectory_sgm_seed0.csv").read_text())

    def drop_wall(text):
        rows = [line.split(",") for line in text.splitlines()]
        return [",".join(c for i, c in enumerate(r) if i != 1) for r in rows]

    ok = drop_wall(texts[0]) == drop_wall(texts[1])
    _report(11, "fixed-seed determinism", ok,
            "trajectory CSVs bit-exact across reruns (all columns except measured wall time)",
            time.perf_counter() - t0, 300.0)
