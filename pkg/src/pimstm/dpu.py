"""Single-DPU simulator: tiered memory, tasklets, the atomic register and CAS.

Tasklets run as host threads.  The WRAM/MRAM latency gap is not modelled in
time; instead every access made on behalf of a tasklet is counted per
(tasklet, phase, tier, load/store) so relative memory traffic can be compared
across STM designs.
"""

from __future__ import annotations

import sys
from array import array
import threading
import time
from enum import IntEnum

import numpy as np

WRAM = 0
MRAM = 1
TIER_NAMES = ("wram", "mram")

WRAM_SIZE = 64 * 1024
MRAM_SIZE = 64 * 1024 * 1024
MAX_TASKLETS = 24
ATOMIC_SLOTS = 256

LOAD = 0
STORE = 1

# GIL switch interval used while tasklets run; the default (5 ms) would let a
# tasklet run thousands of transactions without ever being preempted.
TASKLET_SWITCH_INTERVAL = 2e-5


class Phase(IntEnum):
    OTHER = 0
    START = 1
    READ = 2
    WRITE = 3
    VALIDATE = 4
    COMMIT = 5
    ABORT = 6


NPHASES = len(Phase)
_CELLS = NPHASES * 4


class DpuError(Exception):
    pass


class OutOfBounds(DpuError):
    pass


class Misaligned(DpuError):
    pass


class ReleaseNotOwned(DpuError):
    pass


class SelfDeadlock(DpuError):
    """A tasklet tried to acquire an atomic slot it already owns."""


class DpuHalted(DpuError):
    """Raised inside spin loops once another tasklet has failed."""


class TaskletError(DpuError):
    def __init__(self, tasklet: int, exc: BaseException):
        super().__init__(f"tasklet {tasklet} failed: {exc!r}")
        self.tasklet = tasklet
        self.exc = exc


def tier_from_name(name) -> int:
    if name in (WRAM, MRAM):
        return int(name)
    try:
        return TIER_NAMES.index(str(name).lower())
    except ValueError:
        raise ValueError(f"unknown memory tier {name!r}") from None


def atomic_bit_index(addr: int) -> int:
    """Slot of the 256-bit atomic register guarding ``addr``."""
    return ((addr >> 2) ^ (addr >> 10)) & 0xFF


class Tasklet:
    """Execution context of one tasklet: its id, current phase and counters."""

    __slots__ = ("id", "phase", "counts", "dpu")

    def __init__(self, dpu: "Dpu", tid: int):
        self.dpu = dpu
        self.id = tid
        self.phase = Phase.OTHER.value
        self.counts = dpu.counters.cells[tid]

    def __repr__(self):
        return f"Tasklet({self.id}, phase={Phase(self.phase).name})"


class AccessCounters:
    """Per (tasklet, phase, tier, kind) access counts.

    Each tasklet owns its own row, so increments never race.
    """

    def __init__(self, tasklets: int = MAX_TASKLETS):
        self.cells = [[0] * _CELLS for _ in range(tasklets)]

    @staticmethod
    def index(phase: int, tier: int, kind: int) -> int:
        return (phase * 2 + tier) * 2 + kind

    def array(self) -> np.ndarray:
        """Counts as an int64 array shaped (tasklet, phase, tier, kind)."""
        return np.array(self.cells, dtype=np.int64).reshape(len(self.cells), NPHASES, 2, 2)

    def total(self, tier=None, kind=None, phase=None, tasklet=None) -> int:
        a = self.array()
        idx = tuple(slice(None) if v is None else int(v) for v in (tasklet, phase, tier, kind))
        return int(a[idx].sum())

    def reset(self):
        for row in self.cells:
            row[:] = [0] * _CELLS


class DpuMemory:
    """Two byte-addressable tiers backed by bytearrays.

    Loads and stores of 1/2/4/8 bytes go through typed memoryviews, so each
    access is a single item read or write and never tears.
    """

    def __init__(self, counters: AccessCounters, wram_size: int = WRAM_SIZE, mram_size: int = MRAM_SIZE):
        self.counters = counters
        self.capacity = (wram_size, mram_size)
        self._raw = (bytearray(wram_size), bytearray(mram_size))
        self._views = tuple(
            {w: memoryview(buf).cast(code) for w, code in ((1, "B"), (2, "H"), (4, "I"), (8, "Q"))}
            for buf in self._raw
        )
        self._w32 = (self._views[0][4], self._views[1][4])

    def _check(self, tier, addr, width):
        if width not in (1, 2, 4, 8):
            raise ValueError(f"unsupported width {width}")
        if addr < 0 or addr + width > self.capacity[tier]:
            raise OutOfBounds(f"{TIER_NAMES[tier]} access [{addr:#x}, +{width}) beyond {self.capacity[tier]:#x}")
        if addr % width:
            raise Misaligned(f"address {addr:#x} not aligned to {width}")

    def load(self, tier: int, addr: int, width: int, ctx: Tasklet) -> int:
        self._check(tier, addr, width)
        ctx.counts[(ctx.phase * 2 + tier) * 2] += 1
        return self._views[tier][width][addr // width]

    def store(self, tier: int, addr: int, width: int, value: int, ctx: Tasklet) -> None:
        self._check(tier, addr, width)
        ctx.counts[(ctx.phase * 2 + tier) * 2 + 1] += 1
        self._views[tier][width][addr // width] = value & ((1 << (8 * width)) - 1)

    # 32-bit fast paths; same semantics as load/store with width=4.
    def load32(self, tier: int, addr: int, ctx: Tasklet) -> int:
        if addr & 3:
            raise Misaligned(f"address {addr:#x} not aligned to 4")
        if addr < 0 or addr + 4 > self.capacity[tier]:
            raise OutOfBounds(f"{TIER_NAMES[tier]} access [{addr:#x}, +4) beyond capacity")
        ctx.counts[(ctx.phase * 2 + tier) * 2] += 1
        return self._w32[tier][addr >> 2]

    def store32(self, tier: int, addr: int, value: int, ctx: Tasklet) -> None:
        if addr & 3:
            raise Misaligned(f"address {addr:#x} not aligned to 4")
        if addr < 0 or addr + 4 > self.capacity[tier]:
            raise OutOfBounds(f"{TIER_NAMES[tier]} access [{addr:#x}, +4) beyond capacity")
        ctx.counts[(ctx.phase * 2 + tier) * 2 + 1] += 1
        self._w32[tier][addr >> 2] = value & 0xFFFFFFFF

    def load_words(self, tier: int, addr: int, count: int, ctx: Tasklet) -> list[int]:
        """Bulk read of ``count`` 32-bit words, counted as ``count`` loads."""
        if addr & 3:
            raise Misaligned(f"address {addr:#x} not aligned to 4")
        if addr < 0 or addr + 4 * count > self.capacity[tier]:
            raise OutOfBounds("bulk read beyond capacity")
        ctx.counts[(ctx.phase * 2 + tier) * 2] += count
        return self._w32[tier][addr >> 2 : (addr >> 2) + count].tolist()

    # Host-side (CPU <-> DPU transfer) access: not attributed to any tasklet.
    def peek32(self, tier: int, addr: int) -> int:
        self._check(tier, addr, 4)
        return self._w32[tier][addr >> 2]

    def poke32(self, tier: int, addr: int, value: int) -> None:
        self._check(tier, addr, 4)
        self._w32[tier][addr >> 2] = value & 0xFFFFFFFF

    def peek_words(self, tier: int, addr: int, count: int) -> list[int]:
        self._check(tier, addr, 4)
        if addr + 4 * count > self.capacity[tier]:
            raise OutOfBounds("bulk read beyond capacity")
        return self._w32[tier][addr >> 2 : (addr >> 2) + count].tolist()

    def poke_words(self, tier: int, addr: int, values) -> None:
        values = list(values)
        self._check(tier, addr, 4)
        if addr + 4 * len(values) > self.capacity[tier]:
            raise OutOfBounds("bulk write beyond capacity")
        w = addr >> 2
        self._w32[tier][w : w + len(values)] = array("I", [v & 0xFFFFFFFF for v in values])

    def image(self, tier: int, start: int = 0, stop: int | None = None) -> bytes:
        stop = self.capacity[tier] if stop is None else stop
        return bytes(self._raw[tier][start:stop])


class AtomicRegister:
    """The 256-slot acquire/release register.

    ``hash_fn`` maps an address to a slot; distinct addresses sharing a slot
    serialize each other.  Acquire spins with bounded exponential back-off.
    """

    SPIN_YIELDS = 16
    MAX_BACKOFF = 1e-4

    def __init__(self, hash_fn=atomic_bit_index, halted: threading.Event | None = None):
        self.hash_fn = hash_fn
        self._locks = [threading.Lock() for _ in range(ATOMIC_SLOTS)]
        self._owner: list[int | None] = [None] * ATOMIC_SLOTS
        self._halted = halted

    def slot(self, addr: int) -> int:
        return self.hash_fn(addr) & 0xFF

    def owner(self, addr: int) -> int | None:
        return self._owner[self.slot(addr)]

    def acquire(self, addr: int, tasklet: int) -> None:
        s = self.hash_fn(addr) & 0xFF
        if self._owner[s] == tasklet:
            raise SelfDeadlock(f"tasklet {tasklet} re-acquiring atomic slot {s}")
        lock = self._locks[s]
        if not lock.acquire(False):
            spins, delay = 0, 1e-6
            while not lock.acquire(False):
                if self._halted is not None and self._halted.is_set():
                    raise DpuHalted("another tasklet failed")
                if spins < self.SPIN_YIELDS:
                    spins += 1
                    time.sleep(0)
                else:
                    time.sleep(delay)
                    delay = min(delay * 2, self.MAX_BACKOFF)
        self._owner[s] = tasklet

    def release(self, addr: int, tasklet: int) -> None:
        s = self.hash_fn(addr) & 0xFF
        if self._owner[s] != tasklet:
            raise ReleaseNotOwned(f"tasklet {tasklet} releasing slot {s} owned by {self._owner[s]}")
        self._owner[s] = None
        self._locks[s].release()


class Dpu:
    """One simulated DPU: memory, atomic register, counters and tasklet contexts."""

    def __init__(self, *, hash_fn=atomic_bit_index, wram_size: int = WRAM_SIZE, mram_size: int = MRAM_SIZE):
        self.halted = threading.Event()
        self.counters = AccessCounters(MAX_TASKLETS)
        self.mem = DpuMemory(self.counters, wram_size, mram_size)
        self.atomic = AtomicRegister(hash_fn, self.halted)
        self.tasklets = [Tasklet(self, i) for i in range(MAX_TASKLETS)]
        self.running = False

    def tasklet(self, tid: int) -> Tasklet:
        return self.tasklets[tid]

    def mem_load(self, tier, addr, width, ctx):
        return self.mem.load(tier, addr, width, ctx)

    def mem_store(self, tier, addr, width, value, ctx):
        self.mem.store(tier, addr, width, value, ctx)

    def cas32(self, tier: int, addr: int, expected: int, new: int, ctx: Tasklet) -> tuple[bool, int]:
        """Compare-and-swap emulated with acquire/release on the atomic register.

        Counts one load, plus one store on success.
        """
        mem = self.mem
        if addr & 3:
            raise Misaligned(f"address {addr:#x} not aligned to 4")
        if addr < 0 or addr + 4 > mem.capacity[tier]:
            raise OutOfBounds(f"cas at {addr:#x} beyond capacity")
        self.atomic.acquire(addr, ctx.id)
        try:
            old = mem.load32(tier, addr, ctx)
            if old != expected:
                return False, old
            mem.store32(tier, addr, new, ctx)
            return True, old
        finally:
            self.atomic.release(addr, ctx.id)

    def reset_counters(self):
        if self.running:
            raise DpuError("counters can only be reset between runs")
        self.counters.reset()

    def run_tasklets(self, n: int, entry) -> list:
        return run_tasklets(TaskletGroup(self, n, entry))


class TaskletGroup:
    """``n`` tasklets sharing one DPU; ``entry(ctx)`` is each tasklet's work."""

    def __init__(self, dpu: Dpu, n: int, entry):
        if not 1 <= n <= MAX_TASKLETS:
            raise ValueError(f"a DPU runs 1..{MAX_TASKLETS} tasklets, got {n}")
        self.dpu = dpu
        self.n = n
        self.entry = entry


def run_tasklets(group: TaskletGroup) -> list:
    """Run every tasklet of ``group`` to completion; results in tasklet order.

    If a tasklet raises, the remaining ones are told to stop spinning and the
    first failure is re-raised as :class:`TaskletError`.
    """
    dpu = group.dpu
    results = [None] * group.n
    failures: list[tuple[int, BaseException]] = []
    fail_lock = threading.Lock()
    dpu.halted.clear()

    def body(tid):
        try:
            results[tid] = group.entry(dpu.tasklets[tid])
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            with fail_lock:
                failures.append((tid, exc))
            dpu.halted.set()

    dpu.running = True
    try:
        if group.n == 1:
            body(0)
        else:
            old = sys.getswitchinterval()
            sys.setswitchinterval(TASKLET_SWITCH_INTERVAL)
            try:
                threads = [threading.Thread(target=body, args=(i,), daemon=True) for i in range(group.n)]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
            finally:
                sys.setswitchinterval(old)
    finally:
        dpu.running = False
    for t in dpu.tasklets:
        t.phase = Phase.OTHER.value
    if failures:
        tid, exc = failures[0]
        # Secondary DpuHalted errors are consequences, not causes.
        primary = [f for f in failures if not isinstance(f[1], DpuHalted)]
        if primary:
            tid, exc = primary[0]
        raise TaskletError(tid, exc) from exc
    return results
