"""Several isolated DPUs driven by one host thread.

KMeans shards the points across DPUs and merges per-DPU accumulators on the
host after every round; Labyrinth runs one independent instance per DPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from time import perf_counter_ns

import numpy as np

from ..core import Heap, Stats, Stm, StmConfig
from ..dpu import MRAM, Dpu
from .common import RunResult, run_workload
from .kmeans import KMeans, KMeansConfig, centroids_from, make_points, round_accumulators
from .labyrinth import Labyrinth, LabyrinthConfig


@dataclass
class MultiDpuKMeansResult:
    centroids: np.ndarray
    tables: list  # merged accumulator table per round
    per_dpu: list  # per round, list of per-DPU tables in DPU-id order
    stats: Stats
    violations: list = field(default_factory=list)

    @property
    def total_count(self) -> int:
        return int(self.tables[-1][:, -1].sum())


def shard_points(cfg: KMeansConfig, dpus: int, seed: int) -> list[np.ndarray]:
    """``cfg.points`` points per DPU, drawn as one dataset and cut into contiguous shards."""
    allpts = make_points(cfg, seed, count=cfg.points * dpus)
    return [allpts[d * cfg.points : (d + 1) * cfg.points] for d in range(dpus)]


def merge_tables(tables) -> np.ndarray:
    """Sum per-DPU accumulator tables in DPU-id order."""
    total = np.zeros_like(tables[0])
    for t in tables:
        total = total + t
    return total


def multi_dpu_kmeans(dpus: int, cfg: KMeansConfig | str = "LC", stm_cfg: StmConfig | None = None, *,
                     seed: int = 0, tasklets: int | None = None) -> MultiDpuKMeansResult:
    """KMeans over ``dpus`` simulated DPUs; ``stm_cfg=None`` uses the serial STM."""
    from ..oracle import SerialStm

    if isinstance(cfg, str):
        from .kmeans import WORKLOADS

        cfg = WORKLOADS[cfg.upper()]
    if dpus < 1:
        raise ValueError("need at least one DPU")
    tasklets = tasklets or (stm_cfg.tasklets if stm_cfg else 1)
    shards = shard_points(cfg, dpus, seed)
    centroids = shards[0][: cfg.k].copy()
    parts = []
    for d, pts in enumerate(shards):
        dpu = Dpu()
        wl = KMeans(cfg, seed=seed, data=pts, initial=centroids)
        wl.setup(dpu, Heap())
        if stm_cfg is None:
            stm = SerialStm(dpu, tasklets)
        else:
            stm = Stm(dpu, replace(stm_cfg, tasklets=tasklets))
        parts.append((dpu, wl, stm))
    merged, per_dpu = [], []
    t0 = perf_counter_ns()
    for _ in range(cfg.rounds):
        tables = [wl.run_round(stm, dpu, tasklets, centroids) for dpu, wl, stm in parts]
        total = merge_tables(tables)
        per_dpu.append(tables)
        merged.append(total)
        centroids = centroids_from(total, centroids)
    elapsed = perf_counter_ns() - t0
    stats = Stats(tasklets=tasklets)
    violations = []
    for d, (dpu, wl, stm) in enumerate(parts):
        stats.merge(stm.collect_stats(elapsed))
        violations += [f"dpu {d}: {p}" for p in wl.verify(dpu)]
    stats.elapsed_ns = elapsed
    return MultiDpuKMeansResult(centroids, merged, per_dpu, stats, violations)


def sequential_merge_oracle(cfg: KMeansConfig, dpus: int, seed: int = 0) -> tuple[np.ndarray, list[np.ndarray]]:
    """Host-only reference: same shards, same integer merge in DPU-id order."""
    shards = shard_points(cfg, dpus, seed)
    centroids = shards[0][: cfg.k].copy()
    tables = []
    for _ in range(cfg.rounds):
        total = merge_tables([round_accumulators(pts, centroids) for pts in shards])
        tables.append(total)
        centroids = centroids_from(total, centroids)
    return centroids, tables


@dataclass
class MultiDpuLabyrinthResult:
    instances: list[RunResult]
    stats: Stats

    @property
    def routed_counts(self) -> list[int]:
        return [len(r.outcome) for r in self.instances]


def multi_dpu_labyrinth(dpus: int, cfg: LabyrinthConfig | str = "S", stm_cfg: StmConfig | None = None, *,
                        seed: int = 0, seeds=None, tasklets: int | None = None,
                        keep_dpu: bool = False) -> MultiDpuLabyrinthResult:
    """One independent Labyrinth instance per DPU; instance ``d`` uses ``seeds[d]`` (default ``seed + d``)."""
    if dpus < 1:
        raise ValueError("need at least one DPU")
    seeds = list(seeds) if seeds is not None else [seed + d for d in range(dpus)]
    if len(seeds) != dpus:
        raise ValueError("one seed per DPU")
    results = []
    stats = Stats()
    for s in seeds:
        res = run_workload(Labyrinth(cfg, seed=s), stm_cfg, tasklets=tasklets, keep_dpu=keep_dpu)
        results.append(res)
        stats.merge(res.stats)
    # DPUs run concurrently on hardware: the slowest instance sets the wall time.
    stats.elapsed_ns = max(r.stats.elapsed_ns for r in results)
    stats.tasklets = results[0].stats.tasklets
    return MultiDpuLabyrinthResult(results, stats)
