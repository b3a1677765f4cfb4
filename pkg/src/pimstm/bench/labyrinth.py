"""Labyrinth: Lee-style circuit routing on a 3D grid.

Each job connects a source cell to a destination cell.  A tasklet pops a job
from a shared queue in a short transaction, then routes it in a long one:
copy the grid without instrumentation, run a breadth-first wavefront over
free cells, trace a shortest path back, and claim every path cell with
transactional loads and stores.  A claimed cell met during the claim means
the private copy went stale, so the attempt aborts and starts over.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

from ..core import Heap, StmError
from ..dpu import MRAM, Dpu
from .common import Workload

FREE = 0
# Unrouted endpoints are reserved for their own job: RESERVED | (job + 1).
RESERVED = 0x80000000


class NoPathExists(StmError):
    """The job cannot be routed on the current grid (not a transactional conflict)."""


@dataclass(frozen=True)
class LabyrinthConfig:
    x: int = 16
    y: int = 16
    z: int = 3
    paths: int = 100

    def __post_init__(self):
        if min(self.x, self.y, self.z) < 1:
            raise ValueError("grid dimensions must be positive")
        if 2 * self.paths > self.cells:
            raise ValueError("not enough cells for distinct endpoints")

    @property
    def cells(self) -> int:
        return self.x * self.y * self.z

    def index(self, x: int, y: int, z: int) -> int:
        return (z * self.y + y) * self.x + x

    def coords(self, i: int) -> tuple[int, int, int]:
        x = i % self.x
        y = (i // self.x) % self.y
        return x, y, i // (self.x * self.y)

    def neighbors(self, i: int):
        x, y, z = self.coords(i)
        if x > 0:
            yield i - 1
        if x < self.x - 1:
            yield i + 1
        if y > 0:
            yield i - self.x
        if y < self.y - 1:
            yield i + self.x
        plane = self.x * self.y
        if z > 0:
            yield i - plane
        if z < self.z - 1:
            yield i + plane


WORKLOADS = {
    "S": LabyrinthConfig(16, 16, 3),
    "M": LabyrinthConfig(32, 32, 3),
    "L": LabyrinthConfig(128, 128, 3),
}


def random_jobs(cfg: LabyrinthConfig, seed: int) -> list[tuple[int, int]]:
    """``cfg.paths`` jobs with pairwise-distinct endpoints, as flat cell indices."""
    cells = random.Random(seed).sample(range(cfg.cells), 2 * cfg.paths)
    return list(zip(cells[0::2], cells[1::2]))


def load_instance(path) -> tuple[LabyrinthConfig, list[tuple[int, int]]]:
    """Parse a grid+jobs file: header ``X Y Z`` then ``src x y z dst x y z`` lines.

    The ``src``/``dst`` words are optional; blank lines and ``#`` comments are skipped.
    """
    lines = [ln.split("#", 1)[0].split() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty labyrinth file")
    try:
        x, y, z = map(int, lines[0])
    except ValueError:
        raise ValueError(f"bad header {' '.join(lines[0])!r}; expected 'X Y Z'") from None
    coords = []
    for ln in lines[1:]:
        nums = [t for t in ln if t.lower() not in ("src", "dst")]
        if len(nums) != 6:
            raise ValueError(f"bad job line {' '.join(ln)!r}")
        coords.append(tuple(map(int, nums)))
    cfg = LabyrinthConfig(x, y, z, paths=len(coords))
    jobs = []
    for sx, sy, sz, dx, dy, dz in coords:
        for cx, cy, cz in ((sx, sy, sz), (dx, dy, dz)):
            if not (0 <= cx < x and 0 <= cy < y and 0 <= cz < z):
                raise ValueError(f"cell ({cx}, {cy}, {cz}) outside the {x}x{y}x{z} grid")
        jobs.append((cfg.index(sx, sy, sz), cfg.index(dx, dy, dz)))
    ends = [c for job in jobs for c in job]
    if len(set(ends)) != len(ends):
        raise ValueError("job endpoints must be pairwise distinct")
    return cfg, jobs


def dump_instance(cfg: LabyrinthConfig, jobs) -> str:
    out = [f"{cfg.x} {cfg.y} {cfg.z}"]
    for s, d in jobs:
        out.append("src {} {} {} dst {} {} {}".format(*cfg.coords(s), *cfg.coords(d)))
    return "\n".join(out) + "\n"


def bfs_path(cfg: LabyrinthConfig, grid, src: int, dst: int, mine: int = FREE) -> list[int]:
    """Shortest path from ``src`` to ``dst`` (both inclusive) over cells that are free or hold ``mine``."""
    if grid[src] not in (FREE, mine) or grid[dst] not in (FREE, mine):
        raise NoPathExists("endpoint already occupied")
    dist = {src: 0}
    frontier = deque([src])
    while frontier:
        c = frontier.popleft()
        if c == dst:
            break
        d = dist[c] + 1
        for n in cfg.neighbors(c):
            if n not in dist and (grid[n] == FREE or grid[n] == mine):
                dist[n] = d
                frontier.append(n)
    if dst not in dist:
        raise NoPathExists("destination unreachable")
    # Trace back, always taking the first neighbour one step closer.
    path = [dst]
    c = dst
    while c != src:
        d = dist[c] - 1
        c = next(n for n in cfg.neighbors(c) if dist.get(n) == d)
        path.append(c)
    path.reverse()
    return path


def pop_job(tx, head: int, njobs: int):
    """Short transaction: take the next job index or None when the queue is empty."""
    i = tx.load(head)
    if i >= njobs:
        return None
    tx.store(head, i + 1)
    return i


def labyrinth_route(tx, cfg: LabyrinthConfig, job: tuple[int, int], grid_addr: int, mark: int, dpu: Dpu) -> list[int]:
    """Route one job and claim its cells with ``mark``.

    Raises NoPathExists when the private copy has no route.
    """
    grid = dpu.mem.load_words(MRAM, grid_addr, cfg.cells, tx.ctx)
    mine = RESERVED | mark
    path = bfs_path(cfg, grid, *job, mine=mine)
    for c in path:
        if tx.load(grid_addr + 4 * c) not in (FREE, mine):
            tx.abort()
        tx.store(grid_addr + 4 * c, mark)
    return path


def route_or_none(tx, cfg, job, grid_addr, mark, dpu):
    """``labyrinth_route`` that commits an empty transaction for unroutable jobs."""
    try:
        return labyrinth_route(tx, cfg, job, grid_addr, mark, dpu)
    except NoPathExists:
        return None


class Labyrinth(Workload):
    name = "labyrinth"
    force_mram = True  # routing sets can outgrow WRAM

    def __init__(self, cfg: LabyrinthConfig | str = "S", seed: int = 0, jobs=None, **overrides):
        super().__init__(seed)
        if isinstance(cfg, str):
            self.tag = cfg.upper()
            cfg = WORKLOADS[self.tag]
        else:
            self.tag = next((t for t, c in WORKLOADS.items() if (c.x, c.y, c.z) == (cfg.x, cfg.y, cfg.z)), "custom")
        if jobs is not None:
            overrides.setdefault("paths", len(jobs))
        self.cfg = replace(cfg, **overrides) if overrides else cfg
        self._jobs = list(jobs) if jobs is not None else None
        self.routes: dict[int, list[int]] = {}
        self.failed: set[int] = set()

    @classmethod
    def from_file(cls, path, seed: int = 0) -> "Labyrinth":
        cfg, jobs = load_instance(path)
        return cls(cfg, seed=seed, jobs=jobs)

    @property
    def jobs(self) -> list[tuple[int, int]]:
        return self._jobs if self._jobs is not None else random_jobs(self.cfg, self.seed)

    def setup(self, dpu: Dpu, heap: Heap) -> None:
        cfg = self.cfg
        self.job_list = self.jobs
        self.routes, self.failed = {}, set()
        self.head = heap.alloc(4)
        self.jobs_addr = heap.alloc(8 * len(self.job_list))
        self.grid_addr = heap.alloc(4 * cfg.cells)
        dpu.mem.poke32(MRAM, self.head, 0)
        dpu.mem.poke_words(MRAM, self.jobs_addr, [v for job in self.job_list for v in job])
        grid = [FREE] * cfg.cells
        for i, (src, dst) in enumerate(self.job_list):
            grid[src] = grid[dst] = RESERVED | (i + 1)
        dpu.mem.poke_words(MRAM, self.grid_addr, grid)

    def execute(self, stm, dpu: Dpu, tasklets: int) -> None:
        cfg, njobs = self.cfg, len(self.job_list)

        def entry(ctx):
            routed, failed = {}, []
            while True:
                i = stm.atomic(ctx, pop_job, self.head, njobs)
                if i is None:
                    return routed, failed
                job = tuple(dpu.mem.load_words(MRAM, self.jobs_addr + 8 * i, 2, ctx))
                path = stm.atomic(ctx, route_or_none, cfg, job, self.grid_addr, i + 1, dpu)
                if path is None:
                    failed.append(i)
                else:
                    routed[i] = path

        for routed, failed in dpu.run_tasklets(tasklets, entry):
            self.routes.update(routed)
            self.failed.update(failed)

    def grid(self, dpu: Dpu) -> list[int]:
        return dpu.mem.peek_words(MRAM, self.grid_addr, self.cfg.cells)

    def outcome(self, dpu: Dpu):
        return frozenset((i, tuple(p)) for i, p in self.routes.items())

    def verify(self, dpu: Dpu) -> list[str]:
        cfg = self.cfg
        problems = []
        done = set(self.routes) | self.failed
        if done != set(range(len(self.job_list))) or set(self.routes) & self.failed:
            problems.append(f"{len(done)} of {len(self.job_list)} jobs processed exactly once")
        owner: dict[int, int] = {}
        for i, path in self.routes.items():
            src, dst = self.job_list[i]
            if not path or path[0] != src or path[-1] != dst:
                problems.append(f"job {i}: path endpoints do not match the job")
            for a, b in zip(path, path[1:]):
                if b not in set(cfg.neighbors(a)):
                    problems.append(f"job {i}: cells {a} and {b} are not adjacent")
                    break
            for c in path:
                if c in owner:
                    problems.append(f"jobs {owner[c]} and {i} share cell {c}")
                owner[c] = i
        grid = self.grid(dpu)
        marked = {c: v - 1 for c, v in enumerate(grid) if v != FREE and not v & RESERVED}
        if marked != owner:
            problems.append("grid marks disagree with the committed paths")
        for i in self.failed:
            for c in self.job_list[i]:
                if grid[c] != RESERVED | (i + 1):
                    problems.append(f"job {i}: unrouted endpoint {c} lost its reservation")
        return problems

    def invariant(self, reads) -> bool:
        # A path claim never reads the same cell twice with different values.
        seen: dict[int, int] = {}
        for addr, v in reads:
            if seen.setdefault(addr, v) != v:
                return False
        return True
