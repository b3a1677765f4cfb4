"""ArrayBench: two-phase transactions over a word array.

Phase 1 reads random entries of the read-mostly region Y.  Phase 2 picks
random pairs from region K, reads both members of every pair and moves a
random amount from one to the other.  Pairs are fixed ``(2j, 2j+1)`` slots of
K, so every pair keeps a constant sum and the whole array keeps a constant
total; both are checkable from any snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..core import Heap
from ..dpu import MRAM, Dpu
from .common import Workload, tasklet_rng, to_signed


@dataclass(frozen=True)
class ArrayBenchConfig:
    n: int = 12_500
    y: int = 2_500
    k: int = 10_000
    phase1_reads: int = 100
    phase2_ops: int = 20
    txns_per_tasklet: int = 1_000
    init: int = 1_000
    max_delta: int = 100

    def __post_init__(self):
        if self.y + self.k != self.n:
            raise ValueError("region sizes must add up to n")
        if self.k % 2 or self.phase2_ops % 2:
            raise ValueError("region K and phase-2 op count must be even (entries move in pairs)")
        if self.phase2_ops // 2 > self.k // 2:
            raise ValueError("more phase-2 pairs than region K holds")
        if self.phase1_reads and not self.y:
            raise ValueError("phase 1 needs a non-empty region Y")


WORKLOAD_A = ArrayBenchConfig()
WORKLOAD_B = ArrayBenchConfig(n=10, y=0, k=10, phase1_reads=0, phase2_ops=4)
WORKLOADS = {"A": WORKLOAD_A, "B": WORKLOAD_B}


def arraybench_txn(tx, base: int, cfg: ArrayBenchConfig, plan) -> None:
    """One transaction; ``plan`` = (Y indices, pair numbers, deltas) drawn beforehand."""
    ys, pairs, deltas = plan
    load, store = tx.load, tx.store
    for i in ys:
        load(base + 4 * i)
    kbase = base + 4 * cfg.y
    firsts = [load(kbase + 8 * p) for p in pairs]
    seconds = [load(kbase + 8 * p + 4) for p in pairs]
    for p, a, b, d in zip(pairs, firsts, seconds, deltas):
        store(kbase + 8 * p, a + d)
        store(kbase + 8 * p + 4, b - d)


def draw_plan(rng, cfg: ArrayBenchConfig):
    ys = [rng.randrange(cfg.y) for _ in range(cfg.phase1_reads)]
    pairs = rng.sample(range(cfg.k // 2), cfg.phase2_ops // 2)
    deltas = [rng.randint(1, cfg.max_delta) * rng.choice((-1, 1)) for _ in pairs]
    return ys, pairs, deltas


class ArrayBench(Workload):
    name = "arraybench"

    def __init__(self, cfg: ArrayBenchConfig | str = "A", seed: int = 0, **overrides):
        super().__init__(seed)
        if isinstance(cfg, str):
            self.tag = cfg.upper()
            cfg = WORKLOADS[self.tag]
        else:
            self.tag = "A" if cfg.phase1_reads else "B"
        self.cfg = replace(cfg, **overrides) if overrides else cfg
        self.base = 0

    @property
    def lock_table_hint(self) -> int:
        # One lock word per array word keeps region Y and region K from aliasing.
        return self.cfg.n

    @property
    def initial_sum(self) -> int:
        return self.cfg.n * self.cfg.init

    def setup(self, dpu: Dpu, heap: Heap) -> None:
        self.base = heap.alloc(4 * self.cfg.n)
        dpu.mem.poke_words(MRAM, self.base, [self.cfg.init] * self.cfg.n)

    def execute(self, stm, dpu: Dpu, tasklets: int) -> None:
        cfg, base = self.cfg, self.base

        def entry(ctx):
            rng = tasklet_rng(self.seed, ctx.id)
            for _ in range(cfg.txns_per_tasklet):
                stm.atomic(ctx, arraybench_txn, base, cfg, draw_plan(rng, cfg))

        dpu.run_tasklets(tasklets, entry)

    def values(self, dpu: Dpu) -> list[int]:
        return [to_signed(v) for v in dpu.mem.peek_words(MRAM, self.base, self.cfg.n)]

    def outcome(self, dpu: Dpu):
        return tuple(self.values(dpu))

    def verify(self, dpu: Dpu) -> list[str]:
        vals = self.values(dpu)
        problems = []
        if sum(vals) != self.initial_sum:
            problems.append(f"array sum {sum(vals)} != {self.initial_sum}")
        y, init = self.cfg.y, self.cfg.init
        bad_pairs = [j for j in range(self.cfg.k // 2) if vals[y + 2 * j] + vals[y + 2 * j + 1] != 2 * init]
        if bad_pairs:
            problems.append(f"{len(bad_pairs)} pairs lost their sum, e.g. pair {bad_pairs[0]}")
        if any(v != init for v in vals[:y]):
            problems.append("read-only region Y was modified")
        return problems

    def invariant(self, reads) -> bool:
        """Every fully-read pair sums to twice the initial value; Y is untouched."""
        cfg, base = self.cfg, self.base
        kbase = base + 4 * cfg.y
        seen: dict[int, int] = {}
        for addr, v in reads:
            if addr < kbase:
                if v != cfg.init:
                    return False
                continue
            slot = (addr - kbase) >> 2
            partner = kbase + 4 * (slot ^ 1)
            if partner in seen and to_signed(seen[partner]) + to_signed(v) != 2 * cfg.init:
                return False
            seen[addr] = v
        return True
