"""Correctness oracles: history recording, a serial reference STM, a
brute-force serializability checker and doomed-snapshot invariant checks.

Opacity is checked in two halves.  Committed transactions of small runs must
admit a serial order (``check_serializable``).  At scale, every attempt,
including the aborted ones, must have read a snapshot satisfying the
workload's global invariant (``doomed_snapshot_check`` and the streaming
``DoomedSnapshotMonitor``).
"""

from __future__ import annotations

import itertools
import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from time import thread_time_ns
from typing import Callable, Iterable, NamedTuple

from .core import COMMITTED, Stats, TxAborted, TxState, accesses_from_counters
from .dpu import MRAM, Phase


class Event(NamedTuple):
    seq: int
    tasklet: int
    attempt: int
    kind: str  # begin | read | write | commit | abort
    addr: int = -1
    value: int = -1


class HistoryLog:
    """Totally ordered event log; ``record`` is safe to call from any tasklet."""

    def __init__(self, events: Iterable[Event] = ()):
        self.events: list[Event] = list(events)
        self._seq = itertools.count(len(self.events))
        self._lock = threading.Lock()

    def record(self, tasklet: int, attempt: int, kind: str, addr: int = -1, value: int = -1) -> Event:
        with self._lock:
            ev = Event(next(self._seq), tasklet, attempt, kind, addr, value)
            self.events.append(ev)
        return ev

    # recorder protocol used by Stm
    def on_begin(self, tid, attempt):
        self.record(tid, attempt, "begin")

    def on_read(self, tid, attempt, addr, value):
        self.record(tid, attempt, "read", addr, value)

    def on_write(self, tid, attempt, addr, value):
        self.record(tid, attempt, "write", addr, value)

    def on_commit(self, tid, attempt):
        self.record(tid, attempt, "commit")

    def on_abort(self, tid, attempt):
        self.record(tid, attempt, "abort")

    def __len__(self):
        return len(self.events)

    def attempts(self) -> dict[int, list[Event]]:
        out: dict[int, list[Event]] = defaultdict(list)
        for ev in self.events:
            out[ev.attempt].append(ev)
        return dict(out)

    def committed(self) -> list[list[Event]]:
        return [evs for evs in self.attempts().values() if evs[-1].kind == "commit"]

    def well_formed(self) -> bool:
        """Begin first, exactly one terminal event last, strictly increasing seq."""
        if any(b.seq <= a.seq for a, b in zip(self.events, self.events[1:])):
            return False
        for evs in self.attempts().values():
            if evs[0].kind != "begin":
                return False
            terminals = [e for e in evs if e.kind in ("commit", "abort")]
            if len(terminals) != 1 or evs[-1] is not terminals[0]:
                return False
        return True

    def to_ndjson(self) -> str:
        return "".join(json.dumps(ev._asdict()) + "\n" for ev in self.events)

    @classmethod
    def from_ndjson(cls, text: str) -> "HistoryLog":
        return cls(Event(**json.loads(line)) for line in text.splitlines() if line.strip())


class SearchSpaceExceeded(Exception):
    pass


@dataclass
class SerializabilityResult:
    ok: bool
    order: list[int] | None = None  # attempt ids in a witnessing serial order
    conflict: tuple | None = None  # minimal evidence when not ok
    reason: str = ""

    def __bool__(self):
        return self.ok


@dataclass
class _Txn:
    attempt: int
    begin: int
    end: int
    ops: list  # (kind, addr, value)
    writes: dict


def _committed_txns(log: HistoryLog) -> list[_Txn]:
    out = []
    for attempt, evs in log.attempts().items():
        if evs[-1].kind != "commit":
            continue
        ops = [(e.kind, e.addr, e.value) for e in evs if e.kind in ("read", "write")]
        writes = {}
        for kind, a, v in ops:
            if kind == "write":
                writes[a] = v
        out.append(_Txn(attempt, evs[0].seq, evs[-1].seq, ops, writes))
    out.sort(key=lambda t: t.begin)
    return out


def _replay(txn: _Txn, state: dict, default: int) -> bool:
    """True if ``txn`` run alone on ``state`` would read what it read."""
    local: dict = {}
    for kind, a, v in txn.ops:
        if kind == "write":
            local[a] = v
        else:
            cur = local[a] if a in local else state.get(a, default)
            if cur != v:
                return False
    return True


def _search(txns: list[_Txn], initial: dict, default: int, budget: int) -> list[int] | None:
    n = len(txns)
    # must_precede[j]: bitmask of txns that finished before txn j began
    must = [0] * n
    for j, tj in enumerate(txns):
        for i, ti in enumerate(txns):
            if i != j and ti.end < tj.begin:
                must[j] |= 1 << i
    full = (1 << n) - 1
    addrs = sorted({a for t in txns for _, a, _ in t.ops} | set(initial))
    failed: set = set()
    nodes = 0

    def key(placed, state):
        return placed, tuple(state.get(a, default) for a in addrs)

    def dfs(placed, state, order):
        nonlocal nodes
        if placed == full:
            return order
        k = key(placed, state)
        if k in failed:
            return None
        nodes += 1
        if nodes > budget:
            raise SearchSpaceExceeded(f"more than {budget} search nodes")
        for j in range(n):
            bit = 1 << j
            if placed & bit or must[j] & ~placed:
                continue
            t = txns[j]
            if not _replay(t, state, default):
                continue
            nstate = dict(state)
            nstate.update(t.writes)
            res = dfs(placed | bit, nstate, order + [t.attempt])
            if res is not None:
                return res
        failed.add(k)
        return None

    return dfs(0, dict(initial), [])


def check_serializable(
    log: HistoryLog,
    initial: dict | None = None,
    *,
    default: int = 0,
    max_txns: int = 30,
    max_addrs: int = 8,
    budget: int = 2_000_000,
) -> SerializabilityResult:
    """Search for a serial order of the committed transactions of ``log``.

    The order must respect real time (a transaction that committed before
    another began precedes it) and, replayed sequentially from ``initial``,
    reproduce every value each committed transaction read.
    """
    initial = dict(initial or {})
    txns = _committed_txns(log)
    addrs = {a for t in txns for _, a, _ in t.ops}
    if len(txns) > max_txns or len(addrs) > max_addrs:
        raise SearchSpaceExceeded(f"{len(txns)} committed txns over {len(addrs)} addresses exceeds the bounds")
    order = _search(txns, initial, default, budget)
    if order is not None:
        return SerializabilityResult(True, order)
    return SerializabilityResult(False, conflict=_minimal_conflict(txns, initial, default, budget), reason="no serial order")


def _minimal_conflict(txns, initial, default, budget):
    written = defaultdict(set)
    for a, v in initial.items():
        written[a].add(v)
    for t in txns:
        for a, v in t.writes.items():
            written[a].add(v)
    for t in txns:
        local = {}
        for kind, a, v in t.ops:
            if kind == "write":
                local[a] = v
            elif a not in local and v != default and v not in written[a]:
                return ("phantom-read", t.attempt, a, v)
    for x, y in itertools.combinations(txns, 2):
        if _search([x, y], initial, default, budget) is None:
            return ("pair", x.attempt, y.attempt)
    return ("set", tuple(t.attempt for t in txns))


def doomed_snapshot_check(invariant: Callable[[list[tuple[int, int]]], bool], log: HistoryLog) -> list[int]:
    """Attempt ids (committed or aborted) whose reads violate ``invariant``.

    ``invariant`` receives the attempt's reads as ``[(addr, value), ...]`` in
    program order.
    """
    bad = []
    for attempt, evs in log.attempts().items():
        reads = [(e.addr, e.value) for e in evs if e.kind == "read"]
        if not invariant(reads):
            bad.append(attempt)
    return bad


class DoomedSnapshotMonitor:
    """Streaming form of :func:`doomed_snapshot_check` for large runs.

    Buffers each tasklet's current attempt and evaluates ``invariant`` at the
    attempt's commit or abort, keeping only the violations.
    """

    def __init__(self, invariant, keep: int = 20):
        self.invariant = invariant
        self._reads: dict[int, list] = defaultdict(list)
        self.violations = 0
        self.examples: list[tuple[int, list]] = []
        self.checked = 0
        self._keep = keep
        self._lock = threading.Lock()

    def on_begin(self, tid, attempt):
        self._reads[tid] = []

    def on_read(self, tid, attempt, addr, value):
        self._reads[tid].append((addr, value))

    def on_write(self, tid, attempt, addr, value):
        pass

    def _finish(self, tid, attempt):
        reads = self._reads[tid]
        ok = self.invariant(reads)
        with self._lock:
            self.checked += 1
            if not ok:
                self.violations += 1
                if len(self.examples) < self._keep:
                    self.examples.append((attempt, list(reads)))

    on_commit = _finish
    on_abort = _finish


class Tee:
    """Fan recorder events out to several recorders."""

    def __init__(self, *recorders):
        self.recorders = [r for r in recorders if r is not None]

    def __getattr__(self, name):
        targets = [getattr(r, name) for r in self.recorders]

        def call(*a):
            for t in targets:
                t(*a)

        return call


# ---------------------------------------------------------------------------
# Serial reference STM


class SerialTx:
    def __init__(self, stm: "SerialStm", ctx, attempt: int):
        self.stm = stm
        self.ctx = ctx
        self.tid = ctx.id
        self.attempt = attempt
        self.status = TxState.ACTIVE
        self._undo: list[tuple[int, int]] = []

    def load(self, addr: int) -> int:
        ctx = self.ctx
        ctx.phase = Phase.READ.value
        v = self.stm.mem.load32(MRAM, addr, ctx)
        ctx.phase = Phase.OTHER.value
        if self.stm.recorder is not None:
            self.stm.recorder.on_read(self.tid, self.attempt, addr, v)
        return v

    def store(self, addr: int, value: int) -> None:
        ctx = self.ctx
        value &= 0xFFFFFFFF
        ctx.phase = Phase.WRITE.value
        self._undo.append((addr, self.stm.mem.load32(MRAM, addr, ctx)))
        self.stm.mem.store32(MRAM, addr, value, ctx)
        ctx.phase = Phase.OTHER.value
        if self.stm.recorder is not None:
            self.stm.recorder.on_write(self.tid, self.attempt, addr, value)

    def commit(self):
        self.status = TxState.COMMITTED
        return COMMITTED

    def rollback(self):
        for addr, old in reversed(self._undo):
            self.stm.mem.poke32(MRAM, addr, old)
        self._undo.clear()
        self.status = TxState.ABORTED

    def abort(self):
        self.rollback()
        raise TxAborted("explicit abort")


class SerialStm:
    """Golden reference: one global mutex around every transaction.

    Never aborts on its own (an explicit ``tx.abort()`` is undone and retried).
    """

    name = "serial"

    def __init__(self, dpu, tasklets: int = 1, recorder=None):
        self.dpu = dpu
        self.mem = dpu.mem
        self.recorder = recorder
        self.tasklets = tasklets
        self._mutex = threading.Lock()
        self.stats = [Stats() for _ in range(tasklets)]
        self._attempts = [0] * tasklets
        self._active = [False] * tasklets

    def atomic(self, ctx, body, *args):
        while True:
            with self._mutex:
                attempt = self._attempts[ctx.id] * 64 + ctx.id
                self._attempts[ctx.id] += 1
                if self.recorder is not None:
                    self.recorder.on_begin(ctx.id, attempt)
                t0 = thread_time_ns()
                tx = SerialTx(self, ctx, attempt)
                try:
                    result = body(tx, *args)
                except TxAborted:
                    tx.rollback()
                    self.stats[ctx.id].aborted += 1
                    self.stats[ctx.id].phase_ns["wasted"] += thread_time_ns() - t0
                    if self.recorder is not None:
                        self.recorder.on_abort(ctx.id, attempt)
                    continue
                tx.commit()
                self.stats[ctx.id].committed += 1
                self.stats[ctx.id].phase_ns["other"] += thread_time_ns() - t0
                if self.recorder is not None:
                    self.recorder.on_commit(ctx.id, attempt)
                return result

    def residue(self) -> list[int]:
        return []

    def collect_stats(self, elapsed_ns: int) -> Stats:
        total = Stats(tasklets=self.tasklets)
        for s in self.stats:
            total.merge(s)
        total.elapsed_ns = elapsed_ns
        total.accesses = accesses_from_counters(self.dpu.counters, self.tasklets)
        return total


def small_history(cfg, seed: int, *, tasklets: int = 3, txns: int = 10, addrs: int = 8,
                  max_ops: int = 5, hash_fn=None) -> HistoryLog:
    """Run a random read/read-modify-write mix over ``addrs`` words and return its history.

    Every stored value is unique (tasklet id in the high bits, a per-tasklet
    counter below), so a read of a value no committed transaction wrote is
    unambiguous.  Tasklets yield between operations to force interleavings.
    """
    import random
    import time
    from dataclasses import replace

    from .core import Stm
    from .dpu import Dpu, atomic_bit_index

    dpu = Dpu(hash_fn=hash_fn or atomic_bit_index)
    log = HistoryLog()
    stm = Stm(dpu, replace(cfg, tasklets=tasklets), recorder=log)

    def body(tx, plan, counter):
        for kind, a in plan:
            v = tx.load(4 * a)
            time.sleep(0)
            if kind == "w":
                counter[0] += 1
                tx.store(4 * a, (tx.tid + 1) << 24 | counter[0])
                time.sleep(0)
        return v

    def entry(ctx):
        rng = random.Random(seed * 7919 + ctx.id)
        counter = [0]
        for _ in range(txns):
            plan = [(rng.choice("rw"), rng.randrange(addrs)) for _ in range(rng.randint(1, max_ops))]
            stm.atomic(ctx, body, plan, counter)

    dpu.run_tasklets(tasklets, entry)
    return log


def serial_replay(workload, seed: int | None = None):
    """Run ``workload`` once on the serial STM with one tasklet.

    Returns the benchmark's :class:`~pimstm.bench.common.RunResult`, whose
    ``outcome`` and ``heap_image`` are the golden values.
    """
    from .bench.common import run_workload

    if seed is not None:
        workload = workload.reseeded(seed)
    return run_workload(workload, None, tasklets=1, serial=True)


__all__ = [
    "Event",
    "HistoryLog",
    "SerializabilityResult",
    "SearchSpaceExceeded",
    "check_serializable",
    "doomed_snapshot_check",
    "DoomedSnapshotMonitor",
    "Tee",
    "SerialStm",
    "serial_replay",
    "small_history",
]
