"""KMeans clustering with transactional per-cluster accumulators.

Coordinates are integers in ``[0, coord_max]``.  Each round, tasklets assign
points to the nearest centroid outside any transaction and then add the point
into that cluster's accumulator (dimension sums plus a count) in a short
transaction.  The host turns accumulators into new centroids with integer
division between rounds, so every result is exact and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core import Heap
from ..dpu import MRAM, Dpu
from .common import Workload


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 15
    dims: int = 14
    points: int = 10_000
    rounds: int = 3
    coord_max: int = 1023

    def __post_init__(self):
        if self.k < 1 or self.dims < 1 or self.rounds < 1:
            raise ValueError("k, dims and rounds must be positive")
        if self.points < self.k:
            raise ValueError("need at least k points")
        if self.points * self.coord_max >= 1 << 32:
            raise ValueError("accumulator sums would overflow 32 bits")


WORKLOADS = {"LC": KMeansConfig(k=15), "HC": KMeansConfig(k=2)}


def make_points(cfg: KMeansConfig, seed: int, count: int | None = None) -> np.ndarray:
    """Clustered integer points, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    count = cfg.points if count is None else count
    blobs = max(cfg.k, 2)
    centers = rng.integers(0, cfg.coord_max + 1, size=(blobs, cfg.dims))
    labels = rng.integers(0, blobs, size=count)
    noise = rng.normal(0, cfg.coord_max / 20, size=(count, cfg.dims))
    pts = np.rint(centers[labels] + noise)
    return np.clip(pts, 0, cfg.coord_max).astype(np.int64)


def nearest(point, centroids: np.ndarray) -> int:
    """Index of the closest centroid (squared Euclidean); ties go to the lowest id."""
    d = centroids - np.asarray(point, dtype=np.int64)
    return int(np.argmin(np.einsum("ij,ij->i", d, d)))


def accumulate(tx, acc: int, cid: int, point, dims: int) -> None:
    """Add ``point`` into cluster ``cid``: ``dims`` sum words then the count word."""
    base = acc + 4 * cid * (dims + 1)
    load, store = tx.load, tx.store
    for j in range(dims):
        a = base + 4 * j
        store(a, load(a) + point[j])
    a = base + 4 * dims
    store(a, load(a) + 1)


def kmeans_assign_and_update(tx, point, centroids: np.ndarray, acc: int) -> int:
    cid = nearest(point, centroids)
    accumulate(tx, acc, cid, [int(v) for v in point], centroids.shape[1])
    return cid


def centroids_from(acc: np.ndarray, old: np.ndarray) -> np.ndarray:
    """New centroids = sums // count; empty clusters keep their old centroid."""
    sums, counts = acc[:, :-1], acc[:, -1]
    out = old.copy()
    nz = counts > 0
    out[nz] = sums[nz] // counts[nz, None]
    return out


def round_accumulators(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact per-round oracle: the accumulator table any correct run must produce."""
    d = points[:, None, :] - centroids[None, :, :]
    assign = np.argmin(np.einsum("pkd,pkd->pk", d, d), axis=1)
    k, dims = centroids.shape
    acc = np.zeros((k, dims + 1), dtype=np.int64)
    np.add.at(acc[:, :-1], assign, points)
    np.add.at(acc[:, -1], assign, 1)
    return acc


class KMeans(Workload):
    name = "kmeans"

    def __init__(self, cfg: KMeansConfig | str = "LC", seed: int = 0, data: np.ndarray | None = None,
                 initial: np.ndarray | None = None, **overrides):
        super().__init__(seed)
        if isinstance(cfg, str):
            self.tag = cfg.upper()
            cfg = WORKLOADS[self.tag]
        else:
            self.tag = "LC" if cfg.k > 2 else "HC"
        if data is not None:
            overrides.setdefault("points", len(data))
        self.cfg = replace(cfg, **overrides) if overrides else cfg
        self._points = None if data is None else np.asarray(data, dtype=np.int64)
        self._initial = initial
        self.history: list[np.ndarray] = []

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            return make_points(self.cfg, self.seed)
        return self._points

    def setup(self, dpu: Dpu, heap: Heap) -> None:
        cfg = self.cfg
        self.pts = self.points
        self.centroids = (self.pts[: cfg.k].copy() if self._initial is None
                          else np.asarray(self._initial, dtype=np.int64).copy())
        self.start_centroids = self.centroids.copy()
        self.history = []
        self.rounds_seen: list[tuple[np.ndarray, np.ndarray]] = []
        self.acc = heap.alloc(4 * cfg.k * (cfg.dims + 1))
        self.pts_addr = heap.alloc(4 * cfg.points * cfg.dims)
        dpu.mem.poke_words(MRAM, self.pts_addr, self.pts.ravel().tolist())

    def run_round(self, stm, dpu: Dpu, tasklets: int, centroids: np.ndarray) -> np.ndarray:
        """One assignment round against ``centroids``; returns the accumulator table."""
        cfg = self.cfg
        dims, acc, pts_addr = cfg.dims, self.acc, self.pts_addr
        dpu.mem.poke_words(MRAM, acc, [0] * (cfg.k * (dims + 1)))
        cents = np.asarray(centroids, dtype=np.int64)

        def entry(ctx):
            mem = dpu.mem
            for p in range(ctx.id, cfg.points, tasklets):
                point = mem.load_words(MRAM, pts_addr + 4 * dims * p, dims, ctx)
                stm.atomic(ctx, accumulate, acc, nearest(point, cents), point, dims)

        dpu.run_tasklets(tasklets, entry)
        table = np.array(dpu.mem.peek_words(MRAM, acc, cfg.k * (dims + 1)), dtype=np.int64)
        table = table.reshape(cfg.k, dims + 1)
        self.rounds_seen.append((cents.copy(), table))
        return table

    def execute(self, stm, dpu: Dpu, tasklets: int) -> None:
        for _ in range(self.cfg.rounds):
            table = self.run_round(stm, dpu, tasklets, self.centroids)
            self.history.append(table)
            self.centroids = centroids_from(table, self.centroids)

    def outcome(self, dpu: Dpu):
        return {
            "accumulators": tuple(tuple(map(int, row)) for row in self.history[-1]) if self.history else (),
            "centroids": tuple(tuple(map(int, row)) for row in self.centroids),
        }

    def verify(self, dpu: Dpu) -> list[str]:
        problems = []
        for r, (cents, table) in enumerate(self.rounds_seen):
            if int(table[:, -1].sum()) != self.cfg.points:
                problems.append(f"round {r}: {int(table[:, -1].sum())} points counted, expected {self.cfg.points}")
            if not np.array_equal(table, round_accumulators(self.pts, cents)):
                problems.append(f"round {r}: accumulators differ from the exact oracle")
        return problems

    def invariant(self, reads) -> bool:
        # Count words only grow within a round and never exceed the point count.
        cfg = self.cfg
        stride = 4 * (cfg.dims + 1)
        for addr, v in reads:
            off = addr - self.acc
            if 0 <= off < stride * cfg.k and off % stride == 4 * cfg.dims and v > cfg.points:
                return False
        return True


def kmeans_reference(points: np.ndarray, initial: np.ndarray, rounds: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Host-only KMeans with the same integer arithmetic; returns final centroids and per-round tables."""
    cents = np.asarray(initial, dtype=np.int64).copy()
    tables = []
    for _ in range(rounds):
        table = round_accumulators(points, cents)
        tables.append(table)
        cents = centroids_from(table, cents)
    return cents, tables
