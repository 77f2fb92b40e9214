"""Batch samplers: uniform, loss-proportional (seed-partitioned), and
cluster-ranked epoch assembly with periodic score refreshes and background
graph rebuilds.

The cluster sampler probes a fraction of each cluster for fresh losses,
maps the (optionally stability-augmented) cluster scores to sampling
fractions, assembles an epoch with a floor of one sample per cluster, and
serves it in shuffled batches until the next refresh.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .isr import node_scores_subset
from .lrd import Clustering

log = logging.getLogger(__name__)

MODES = ("uniform", "mis", "sgm", "sgm_s")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "uniform"
    batch_size: int = 256
    probe_fraction: float = 0.15
    tau_e: int = 700
    tau_g: int = 2500
    p_min: float = 0.02
    p_max: float = 0.6
    epoch_target: int | None = None  # defaults to N // 16 at sampler construction
    mis_seeds: int = 1000
    seed: int = 0
    isr_k: int = 6
    isr_r: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown sampler mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if not 0 < self.p_min <= self.p_max <= 1:
            raise ConfigError("need 0 < p_min <= p_max <= 1")
        if not 0 < self.probe_fraction <= 1:
            raise ConfigError("probe_fraction must be in (0, 1]")
        if self.batch_size < 1 or self.tau_e < 1:
            raise ConfigError("batch_size and tau_e must be >= 1")
        if self.epoch_target is not None and self.batch_size > self.epoch_target:
            raise ConfigError("batch_size cannot exceed epoch_target")


@dataclass(frozen=True)
class ScoreTable:
    probe_loss_mean: np.ndarray
    isr_mean: np.ndarray | None
    combined_score: np.ndarray
    sampling_fraction: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        if not np.isfinite(self.combined_score).all():
            raise ValueError("combined scores must be finite")


@dataclass(frozen=True)
class Epoch:
    indices: np.ndarray
    composition: np.ndarray  # per-cluster counts

    def __post_init__(self):
        if (self.composition < 1).any():
            raise ValueError("every cluster must contribute at least one sample")
        if int(self.composition.sum()) != len(self.indices):
            raise ValueError("composition does not account for all indices")


def probe_losses(clusters: Clustering, loss_fn, fraction: float, rng):
    """Sample ceil(fraction * size) distinct points per cluster and average
    their fresh losses. Returns (probe_indices_per_cluster, means, n_evals)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    probe_sets = []
    for members in clusters.members:
        m = int(np.ceil(fraction * len(members)))
        probe_sets.append(rng.choice(members, size=m, replace=False))
    flat = np.concatenate(probe_sets)
    losses = np.asarray(loss_fn(flat), dtype=np.float64)
    if losses.shape != flat.shape:
        raise ValueError("loss_fn must return one value per requested index")
    bad = ~np.isfinite(losses)
    if bad.any():
        raise FloatingPointError(f"non-finite loss at point {int(flat[np.argmax(bad)])}")
    means = np.empty(clusters.n_clusters)
    pos = 0
    for cid, probe in enumerate(probe_sets):
        means[cid] = losses[pos:pos + len(probe)].mean()
        pos += len(probe)
    return probe_sets, means, losses


def _minmax(x: np.ndarray) -> np.ndarray:
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def score_and_map(probe_means: np.ndarray, isr_means: np.ndarray | None,
                  p_range=(0.02, 0.6), timestamp: int = 0) -> ScoreTable:
    """Combine normalized scores and map them linearly onto sampling fractions.

    Equal scores across the board collapse to the midpoint fraction.
    """
    probe_means = np.asarray(probe_means, dtype=np.float64)
    if probe_means.size == 0:
        raise ValueError("empty score table")
    p_min, p_max = p_range
    combined = _minmax(probe_means)
    if isr_means is not None:
        isr_means = np.asarray(isr_means, dtype=np.float64)
        if isr_means.shape != probe_means.shape:
            raise ValueError("stability means must align with loss means")
        combined = combined + _minmax(isr_means)
    span = combined.max() - combined.min()
    if span == 0:
        frac = np.full_like(combined, 0.5 * (p_min + p_max))
    else:
        frac = p_min + (combined - combined.min()) / span * (p_max - p_min)
    return ScoreTable(probe_means, isr_means, combined, frac, timestamp)


def assemble_epoch(clusters: Clustering, table: ScoreTable, epoch_target: int,
                   rng) -> Epoch:
    """Scale the per-cluster quotas to the epoch target, round by largest
    remainder (ties favor higher-scored clusters), clamp to [1, size], and
    draw without replacement within each cluster."""
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    n_c = clusters.n_clusters
    if epoch_target < n_c:
        raise ValueError(
            f"epoch_target={epoch_target} cannot satisfy the one-sample floor "
            f"for {n_c} clusters"
        )
    sizes = clusters.sizes.astype(np.int64)
    raw = table.sampling_fraction * sizes
    scaled = raw * (epoch_target / raw.sum())
    base = np.floor(scaled).astype(np.int64)
    residue = int(epoch_target - base.sum())
    if residue > 0:
        remainders = scaled - base
        order = np.lexsort((np.arange(n_c), -table.combined_score, -remainders))
        base[order[:residue]] += 1
    counts = np.clip(base, 1, sizes)
    # Clamping can move the total off target; push the difference back onto
    # clusters with headroom, highest-scored first (lowest-scored trimmed first).
    score_desc = np.lexsort((np.arange(n_c), -table.combined_score))
    deficit = int(epoch_target - counts.sum())
    while deficit > 0:
        moved = False
        for cid in score_desc:
            if counts[cid] < sizes[cid]:
                counts[cid] += 1
                deficit -= 1
                moved = True
                if deficit == 0:
                    break
        if not moved:
            break
    while deficit < 0:
        moved = False
        for cid in score_desc[::-1]:
            if counts[cid] > 1:
                counts[cid] -= 1
                deficit += 1
                moved = True
                if deficit == 0:
                    break
        if not moved:
            break
    parts = [
        rng.choice(members, size=int(c), replace=False)
        for members, c in zip(clusters.members, counts)
    ]
    indices = np.concatenate(parts)
    rng.shuffle(indices)
    return Epoch(indices, counts)


def mis_distribution(points: np.ndarray, loss_fn, n_seeds: int, rng) -> np.ndarray:
    """Loss-proportional sampling distribution from piecewise-constant
    estimates: losses are evaluated at random seed points and every point
    inherits its nearest seed's loss. All-zero losses fall back to uniform."""
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    n = len(points)
    n_seeds = min(n_seeds, n)
    seed_idx = rng.choice(n, size=n_seeds, replace=False)
    losses = np.asarray(loss_fn(seed_idx), dtype=np.float64)
    bad = ~np.isfinite(losses)
    if bad.any():
        raise FloatingPointError(f"non-finite loss at point {int(seed_idx[np.argmax(bad)])}")
    tree = cKDTree(points[seed_idx])
    _, nearest = tree.query(points, k=1)
    mass = losses[nearest]
    total = mass.sum()
    if total <= 0:
        return np.full(n, 1.0 / n)
    return mass / total


class UniformSampler:
    """Plain uniform batches without replacement within a batch."""

    def __init__(self, n_points: int, config: SamplerConfig):
        self.n = n_points
        self.batch_size = config.batch_size
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0

    def set_loss_fn(self, fn):
        pass

    def next_batch(self) -> np.ndarray:
        self.iteration += 1
        return self.rng.choice(self.n, size=min(self.batch_size, self.n), replace=False)


class MISSampler:
    """Loss-proportional i.i.d. batches from seed-partitioned loss estimates."""

    def __init__(self, points: np.ndarray, config: SamplerConfig):
        self.points = np.asarray(points, dtype=np.float64)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.loss_fn = None
        self.prob = None
        self.iteration = 0
        self.loss_evals_last_refresh = 0

    def set_loss_fn(self, fn):
        self.loss_fn = fn

    def _refresh(self):
        if self.loss_fn is None:
            raise RuntimeError("loss_fn must be set before sampling")
        self.prob = mis_distribution(self.points, self.loss_fn,
                                     self.config.mis_seeds, self.rng)
        self.loss_evals_last_refresh = min(self.config.mis_seeds, len(self.points))

    def next_batch(self) -> np.ndarray:
        if self.iteration % self.config.tau_e == 0:
            self._refresh()
        self.iteration += 1
        return self.rng.choice(len(self.points), size=self.config.batch_size,
                               replace=True, p=self.prob)


class ClusterSampler:
    """Cluster-ranked epoch sampler with periodic refreshes and rebuilds.

    Every tau_e iterations: probe fresh losses on a fraction of each cluster,
    rank clusters (optionally adding stability scores in sgm_s mode), and
    assemble a new epoch. Every tau_g iterations a full graph/cluster rebuild
    is triggered through `rebuild_fn`; with background=True it runs on a
    worker thread and the result is adopted at the next refresh boundary,
    with training continuing on the previous clustering meanwhile.
    """

    def __init__(self, points: np.ndarray, clustering: Clustering,
                 config: SamplerConfig, rebuild_fn=None, background: bool = False):
        if config.mode not in ("sgm", "sgm_s"):
            raise ConfigError(f"ClusterSampler supports modes sgm/sgm_s, not {config.mode!r}")
        self.points = np.asarray(points, dtype=np.float64)
        self.clustering = clustering
        self.config = config
        self.rebuild_fn = rebuild_fn
        self.background = background
        self.rng = np.random.default_rng(config.seed)
        self.loss_fn = None
        self.epoch_target = config.epoch_target or max(len(points) // 16, clustering.n_clusters)
        if self.epoch_target < clustering.n_clusters:
            raise ValueError(
                f"epoch_target={self.epoch_target} cannot satisfy the one-sample "
                f"floor for {clustering.n_clusters} clusters"
            )
        self.iteration = 0
        self.table = None
        self.epoch = None
        self._cursor = 0
        self._pending = None  # background rebuild holder
        self.loss_evals_last_refresh = 0
        self.refresh_count = 0
        self.rebuild_count = 0

    def set_loss_fn(self, fn):
        self.loss_fn = fn

    # -- scheduling ---------------------------------------------------------
    def maybe_schedule(self, iteration: int) -> list:
        """Launch/adopt rebuilds per the tau_g cadence. Returns action labels."""
        actions = []
        cfg = self.config
        if self.rebuild_fn is not None and cfg.tau_g and iteration > 0 \
                and iteration % cfg.tau_g == 0:
            if self.background:
                holder = {"result": None, "error": None, "done": threading.Event()}

                def task():
                    try:
                        holder["result"] = self.rebuild_fn()
                    except Exception as exc:  # noqa: BLE001 - fault containment
                        holder["error"] = exc
                    finally:
                        holder["done"].set()

                threading.Thread(target=task, daemon=True).start()
                self._pending = holder
                actions.append("rebuild_started")
            else:
                try:
                    self.clustering = self.rebuild_fn()
                    self.rebuild_count += 1
                    actions.append("rebuild_applied")
                except Exception:
                    log.warning("cluster rebuild failed; keeping previous clustering",
                                exc_info=True)
                    actions.append("rebuild_failed")
        return actions

    def _adopt_pending(self) -> bool:
        if self._pending is None or not self._pending["done"].is_set():
            return False
        holder, self._pending = self._pending, None
        if holder["error"] is not None:
            log.warning("background rebuild failed; keeping previous clustering: %s",
                        holder["error"])
            return False
        self.clustering = holder["result"]
        self.rebuild_count += 1
        return True

    # -- refresh ------------------------------------------------------------
    def refresh(self):
        """Probe, score, and assemble a fresh epoch from the current clustering."""
        if self.loss_fn is None:
            raise RuntimeError("loss_fn must be set before sampling")
        self._adopt_pending()
        probe_sets, means, losses = probe_losses(
            self.clustering, self.loss_fn, self.config.probe_fraction, self.rng
        )
        self.loss_evals_last_refresh = sum(len(p) for p in probe_sets)
        isr_means = None
        if self.config.mode == "sgm_s":
            isr_means = self._stability_means(probe_sets, losses)
        self.table = score_and_map(means, isr_means,
                                   (self.config.p_min, self.config.p_max),
                                   timestamp=self.iteration)
        # A rebuild can raise the cluster count past the configured target;
        # the one-sample floor wins, so grow the epoch as needed.
        target = max(self.epoch_target, self.clustering.n_clusters)
        self.epoch = assemble_epoch(self.clustering, self.table, target, self.rng)
        self._cursor = 0
        self.refresh_count += 1

    def _stability_means(self, probe_sets, losses):
        flat = np.concatenate(probe_sets)
        k = min(self.config.isr_k, len(flat) - 2)
        if k < 1:
            return np.zeros(len(probe_sets))
        result = node_scores_subset(self.points[flat], losses, k=k, r=self.config.isr_r)
        means = np.zeros(len(probe_sets))
        pos = 0
        for cid, probe in enumerate(probe_sets):
            means[cid] = result.scores[pos:pos + len(probe)].mean()
            pos += len(probe)
        return means

    # -- batch serving ------------------------------------------------------
    def next_batch(self) -> np.ndarray:
        cfg = self.config
        if self.iteration % cfg.tau_e == 0:
            self.refresh()
        self.maybe_schedule(self.iteration)
        self.iteration += 1

        if self._cursor >= len(self.epoch.indices):
            # end of a pass: reshuffle and reuse the same epoch
            self.rng.shuffle(self.epoch.indices)
            self._cursor = 0
        end = min(self._cursor + cfg.batch_size, len(self.epoch.indices))
        batch = self.epoch.indices[self._cursor:end].copy()
        self._cursor = end
        return batch


def make_sampler(points: np.ndarray, config: SamplerConfig, clustering=None,
                 rebuild_fn=None, background: bool = False):
    if config.mode == "uniform":
        return UniformSampler(len(points), config)
    if config.mode == "mis":
        return MISSampler(points, config)
    if clustering is None:
        raise ConfigError(f"mode {config.mode!r} needs a clustering")
    return ClusterSampler(points, clustering, config, rebuild_fn, background)
