from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from time import perf_counter_ns

from ..core import DEFAULT_LOCK_TABLE, Heap, Stats, Stm, StmConfig, fit_lock_table
from ..dpu import MRAM, Dpu, atomic_bit_index
from ..oracle import DoomedSnapshotMonitor, SerialStm, Tee


def tasklet_rng(seed: int, tid: int) -> random.Random:
    """Per-tasklet RNG stream seeded with ``seed XOR tid``."""
    return random.Random(seed ^ tid)


def to_signed(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


class Workload:
    """Base class for benchmarks.

    Subclasses lay out shared state in ``setup``, run their tasklets in
    ``execute`` and report structural problems from ``verify``.
    """

    name = "workload"
    tag = ""
    force_mram = False
    # Preferred lock-table size; used when the config keeps the default.
    lock_table_hint: int | None = None

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reseeded(self, seed: int):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.seed = seed
        return clone

    def setup(self, dpu: Dpu, heap: Heap) -> None:
        raise NotImplementedError

    def execute(self, stm, dpu: Dpu, tasklets: int) -> None:
        raise NotImplementedError

    def verify(self, dpu: Dpu) -> list[str]:
        return []

    def outcome(self, dpu: Dpu):
        return None

    def invariant(self, reads) -> bool:
        """Predicate every attempt's reads must satisfy (doomed-snapshot check)."""
        return True

    def heap_range(self) -> tuple[int, int]:
        return self._heap_lo, self._heap_hi


@dataclass
class RunResult:
    stats: Stats
    outcome: object
    violations: list = field(default_factory=list)
    doomed: int = 0
    heap_image: bytes = b""
    initial_image: bytes = b""  # heap right after setup
    residue: list = field(default_factory=list)
    dpu: Dpu | None = None

    @property
    def ok(self) -> bool:
        return not self.violations and not self.doomed and not self.residue


def tuned_config(workload: Workload, cfg: StmConfig) -> StmConfig:
    """Apply the workload's placement and lock-table preferences to ``cfg``."""
    if workload.force_mram and cfg.placement != MRAM:
        cfg = replace(cfg, placement=MRAM)
    if workload.lock_table_hint and cfg.lock_table_entries == DEFAULT_LOCK_TABLE:
        cfg = fit_lock_table(cfg, workload.lock_table_hint)
    return cfg


def run_workload(
    workload: Workload,
    cfg: StmConfig | None,
    *,
    tasklets: int | None = None,
    serial: bool = False,
    oracle: bool = False,
    recorder=None,
    hash_fn=atomic_bit_index,
    keep_dpu: bool = False,
) -> RunResult:
    """Set up ``workload`` on a fresh DPU, run it, and collect stats and checks.

    ``cfg=None`` or ``serial=True`` runs on the serial reference STM.
    """
    if cfg is not None and tasklets is None:
        tasklets = cfg.tasklets
    tasklets = tasklets or 1
    dpu = Dpu(hash_fn=hash_fn)
    heap = Heap()
    workload.setup(dpu, heap)
    workload._heap_lo, workload._heap_hi = 0, max(heap.top, 4)
    monitor = DoomedSnapshotMonitor(workload.invariant) if oracle else None
    if recorder is not None and monitor is not None:
        rec = Tee(recorder, monitor)
    else:
        # not ``or``: an empty HistoryLog is falsy
        rec = recorder if recorder is not None else monitor
    if serial or cfg is None:
        stm = SerialStm(dpu, tasklets, recorder=rec)
    else:
        if cfg.tasklets != tasklets:
            cfg = replace(cfg, tasklets=tasklets)
        stm = Stm(dpu, tuned_config(workload, cfg), recorder=rec)
    initial = dpu.mem.image(MRAM, 0, workload._heap_hi)
    dpu.reset_counters()
    t0 = perf_counter_ns()
    workload.execute(stm, dpu, tasklets)
    elapsed = perf_counter_ns() - t0
    stats = stm.collect_stats(elapsed)
    lo, hi = workload.heap_range()
    return RunResult(
        stats=stats,
        outcome=workload.outcome(dpu),
        violations=workload.verify(dpu),
        doomed=monitor.violations if monitor else 0,
        heap_image=dpu.mem.image(MRAM, lo, hi),
        initial_image=initial,
        residue=stm.residue(),
        dpu=dpu if keep_dpu else None,
    )
