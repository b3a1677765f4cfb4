"""Variant-independent transaction machinery.

Transactional metadata (lock table, global clock words, read/write sets, undo
logs) lives in simulated DPU memory in the tier chosen by
``StmConfig.placement``; application data lives in MRAM.  Set lookups use a
host-side index that is not charged as memory traffic (a hashed lookup
structure); every entry actually read or written is.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from time import thread_time_ns

from .dpu import MAX_TASKLETS, MRAM, MRAM_SIZE, WRAM, WRAM_SIZE, Dpu, Phase, Tasklet, tier_from_name

_OTHER = Phase.OTHER.value
_START = Phase.START.value
_READ = Phase.READ.value
_WRITE = Phase.WRITE.value
_COMMIT = Phase.COMMIT.value
_ABORT = Phase.ABORT.value

# MRAM above this offset is reserved for STM metadata; the heap sits below.
META_MRAM_BASE = 48 * 1024 * 1024
ENTRY_BYTES = 8
DEFAULT_CAPACITY = 4096
DEFAULT_LOCK_TABLE = 1024
WRAM_READSET = 256
WRAM_WRITESET = 64


class Variant(str, Enum):
    NOREC = "norec"
    TINY_CTLWB = "tiny_ctlwb"
    TINY_ETLWB = "tiny_etlwb"
    TINY_ETLWT = "tiny_etlwt"
    VR_CTLWB = "vr_ctlwb"
    VR_ETLWB = "vr_etlwb"
    VR_ETLWT = "vr_etlwt"

    @property
    def family(self) -> str:
        return self.value.split("_")[0]

    @property
    def ctl(self) -> bool:
        return self is Variant.NOREC or self.value.endswith("ctlwb")

    @property
    def write_through(self) -> bool:
        return self.value.endswith("wt")

    @property
    def label(self) -> str:
        if self is Variant.NOREC:
            return "NOrec"
        fam, policy = self.value.split("_")
        return f"{'Tiny' if fam == 'tiny' else 'VR'} {policy.upper()}"


ALL_VARIANTS = tuple(Variant)


def design_variant(metadata: str, reads: str, locking: str, writes: str) -> Variant:
    """Map a point of the design space to its implementation.

    ``metadata`` in {orec, norec}, ``reads`` in {visible, invisible},
    ``locking`` in {etl, ctl}, ``writes`` in {wb, wt}.  Combinations that are
    unsafe (write-through with commit-time locking) or pointless (NOrec with
    visible reads or encounter-time locking) raise ``ConfigInvalid``.
    """
    metadata, reads, locking, writes = (s.lower() for s in (metadata, reads, locking, writes))
    if writes == "wt" and locking == "ctl":
        raise ConfigInvalid("write-through requires encounter-time locking")
    if metadata == "norec":
        if reads == "visible":
            raise ConfigInvalid("NOrec cannot use visible reads")
        if locking == "etl":
            raise ConfigInvalid("NOrec cannot use encounter-time locking")
        if writes != "wb":
            raise ConfigInvalid("NOrec is write-back only")
        return Variant.NOREC
    if metadata != "orec":
        raise ConfigInvalid(f"unknown metadata granularity {metadata!r}")
    fam = {"invisible": "tiny", "visible": "vr"}.get(reads)
    if fam is None or locking not in ("etl", "ctl") or writes not in ("wb", "wt"):
        raise ConfigInvalid(f"unknown design point {(metadata, reads, locking, writes)}")
    return Variant(f"{fam}_{locking}{writes}")


class StmError(Exception):
    pass


class ConfigInvalid(StmError):
    pass


class TxAborted(StmError):
    """Control-flow signal: the current attempt was rolled back."""


class NestedTransaction(StmError):
    pass


class CapacityExceeded(StmError):
    pass


class RetryLimitExceeded(StmError):
    pass


class InvalidAddress(StmError):
    pass


class TxState(Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


COMMITTED = TxState.COMMITTED
ABORTED = TxState.ABORTED


@dataclass(frozen=True)
class StmConfig:
    variant: Variant = Variant.NOREC
    placement: int = MRAM
    lock_table_entries: int = DEFAULT_LOCK_TABLE
    tasklets: int = 1
    seed: int = 0
    readset_capacity: int | None = None
    writeset_capacity: int | None = None
    wram_reserved: int = 0
    # Tier of the lock table when it differs from the other metadata
    # (None: same tier as ``placement``).
    lock_table_placement: int | None = None
    retry_cap: int = 10**6
    # Deliberately unsafe mutant for oracle tests: NOrec skips revalidation,
    # Tiny skips extension validation, VR skips read locking.
    broken: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "placement", tier_from_name(self.placement))
        if self.lock_table_placement is not None:
            object.__setattr__(self, "lock_table_placement", tier_from_name(self.lock_table_placement))

    def with_(self, **kw) -> "StmConfig":
        return replace(self, **kw)

    @property
    def capacities(self) -> tuple[int, int]:
        """(readset, writeset) entry capacities after WRAM auto-sizing."""
        if self.placement == MRAM:
            return (self.readset_capacity or DEFAULT_CAPACITY, self.writeset_capacity or DEFAULT_CAPACITY)
        r = self.readset_capacity or WRAM_READSET
        w = self.writeset_capacity or WRAM_WRITESET
        if self.readset_capacity is None and self.writeset_capacity is None:
            while self._footprint(r, w) > WRAM_SIZE - self.wram_reserved and r > 32:
                r //= 2
                w = max(w // 2, 16)
        return r, w

    @property
    def table_entries(self) -> int:
        """Lock-table words actually laid out (NOrec has no lock table)."""
        return 0 if self.variant.family == "norec" else self.lock_table_entries

    @property
    def table_tier(self) -> int:
        return self.placement if self.lock_table_placement is None else self.lock_table_placement

    def _footprint(self, r: int, w: int) -> int:
        v = self.variant
        per_tasklet = r + w * (len(_used_logs(v)) - 1)
        table = 4 * self.table_entries if self.table_tier == self.placement else 0
        return 8 + table + self.tasklets * per_tasklet * ENTRY_BYTES

    def footprint(self) -> int:
        """Bytes of metadata this configuration places in its tier."""
        return self._footprint(*self.capacities)

    def validate(self) -> None:
        n = self.lock_table_entries
        if n < 1 or n & (n - 1):
            raise ConfigInvalid(f"lock_table_entries must be a power of two, got {n}")
        if not 1 <= self.tasklets <= MAX_TASKLETS:
            raise ConfigInvalid(f"tasklets must be in 1..{MAX_TASKLETS}")
        r, w = self.capacities
        if r < 1 or w < 1:
            raise ConfigInvalid("set capacities must be positive")
        if self.retry_cap < 0:
            raise ConfigInvalid("retry_cap must be non-negative")
        budget = (WRAM_SIZE - self.wram_reserved) if self.placement == WRAM else (MRAM_SIZE - META_MRAM_BASE)
        if self.footprint() > budget:
            raise ConfigInvalid(
                f"metadata needs {self.footprint()} bytes but only {budget} are available in "
                f"{'WRAM' if self.placement == WRAM else 'MRAM'}"
            )


def fit_lock_table(cfg: StmConfig, wanted: int) -> StmConfig:
    """Grow the lock table to ``wanted`` entries (rounded up to a power of two).

    If the grown table no longer fits in WRAM beside the other metadata, the
    table alone moves to MRAM and the rest stays in WRAM.
    """
    n = 1 << max(wanted - 1, 0).bit_length()
    if n <= cfg.lock_table_entries or cfg.variant.family == "norec":
        return cfg
    trial = replace(cfg, lock_table_entries=n)
    try:
        trial.validate()
    except ConfigInvalid:
        if cfg.placement != WRAM or cfg.lock_table_placement is not None:
            return cfg
        trial = replace(trial, lock_table_placement=MRAM)
    return trial


STAT_PHASES = ("start", "read", "write", "validation", "commit", "wasted", "other")


@dataclass
class Stats:
    committed: int = 0
    aborted: int = 0
    elapsed_ns: int = 0
    tasklets: int = 1
    phase_ns: dict = field(default_factory=lambda: dict.fromkeys(STAT_PHASES, 0))
    # access counts: {phase name: {"wram": {"load": n, "store": n}, "mram": {...}}}
    accesses: dict = field(default_factory=dict)
    retries: Counter = field(default_factory=Counter)

    @property
    def attempts(self) -> int:
        return self.committed + self.aborted

    @property
    def elapsed(self) -> float:
        return self.elapsed_ns / 1e9

    @property
    def throughput(self) -> float:
        return self.committed / self.elapsed if self.elapsed_ns else 0.0

    @property
    def abort_rate(self) -> float:
        return self.aborted / self.attempts if self.attempts else 0.0

    def breakdown(self) -> dict:
        total = sum(self.phase_ns.values())
        if not total:
            return dict.fromkeys(STAT_PHASES, 0.0)
        return {k: v / total for k, v in self.phase_ns.items()}

    def tier_accesses(self, tier: str) -> int:
        return sum(sum(p[tier].values()) for p in self.accesses.values())

    def merge(self, other: "Stats") -> "Stats":
        self.committed += other.committed
        self.aborted += other.aborted
        for k, v in other.phase_ns.items():
            self.phase_ns[k] += v
        self.retries.update(other.retries)
        return self


def accesses_from_counters(counters, tasklets: int) -> dict:
    a = counters.array()[:tasklets].sum(axis=0)
    return {
        Phase(p).name.lower(): {
            "wram": {"load": int(a[p, WRAM, 0]), "store": int(a[p, WRAM, 1])},
            "mram": {"load": int(a[p, MRAM, 0]), "store": int(a[p, MRAM, 1])},
        }
        for p in range(len(Phase))
    }


class PairLog:
    """Append-only array of (a, b) word pairs stored in simulated memory."""

    __slots__ = ("mem", "tier", "base", "capacity", "n", "name", "_words", "_w0")

    def __init__(self, mem, tier: int, base: int, capacity: int, name: str):
        self.mem = mem
        self.tier = tier
        self.base = base
        self.capacity = capacity
        self.n = 0
        self.name = name
        if capacity and base + capacity * ENTRY_BYTES > mem.capacity[tier]:
            raise ConfigInvalid(f"{name} region does not fit in its tier")
        self._words = mem._w32[tier]
        self._w0 = base >> 2

    def __len__(self):
        return self.n

    def append(self, ctx: Tasklet, a: int, b: int) -> int:
        # Region bounds were checked at layout; two counted 32-bit stores.
        i = self.n
        if i >= self.capacity:
            raise CapacityExceeded(f"{self.name} full ({self.capacity} entries)")
        w = self._w0 + 2 * i
        words = self._words
        words[w] = a & 0xFFFFFFFF
        words[w + 1] = b & 0xFFFFFFFF
        ctx.counts[(ctx.phase * 2 + self.tier) * 2 + 1] += 2
        self.n = i + 1
        return i

    def get(self, ctx: Tasklet, i: int) -> tuple[int, int]:
        addr = self.base + i * ENTRY_BYTES
        return self.mem.load32(self.tier, addr, ctx), self.mem.load32(self.tier, addr + 4, ctx)

    def first(self, ctx: Tasklet, i: int) -> int:
        return self.mem.load32(self.tier, self.base + i * ENTRY_BYTES, ctx)

    def second(self, ctx: Tasklet, i: int) -> int:
        return self.mem.load32(self.tier, self.base + i * ENTRY_BYTES + 4, ctx)

    def set_second(self, ctx: Tasklet, i: int, b: int) -> None:
        self.mem.store32(self.tier, self.base + i * ENTRY_BYTES + 4, b, ctx)

    def clear(self):
        self.n = 0


class WriteSet(PairLog):
    """Redo log of (addr, value), at most one entry per address."""

    __slots__ = ("index",)

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.index: dict[int, int] = {}

    def put(self, ctx: Tasklet, addr: int, value: int) -> None:
        i = self.index.get(addr)
        if i is None:
            self.index[addr] = self.append(ctx, addr, value)
        else:
            self.set_second(ctx, i, value)

    def lookup(self, ctx: Tasklet, addr: int):
        i = self.index.get(addr)
        if i is None:
            return None
        return self.second(ctx, i)

    def clear(self):
        self.n = 0
        self.index.clear()


def _used_logs(v: Variant) -> set[str]:
    used = {"read", "undo" if v.write_through else "write"}
    if v.family == "tiny":
        used.add("locks")
    return used


class Transaction:
    """Per-tasklet transaction descriptor and the public tx API.

    ``load``/``store`` raise :class:`TxAborted` when the attempt must be
    retried; the descriptor is already rolled back when that happens.
    """

    def __init__(self, stm: "Stm", ctx: Tasklet, regions: dict):
        self.stm = stm
        self.algo = stm.algo
        self.ctx = ctx
        self.tid = ctx.id
        self.status = TxState.ABORTED
        self.attempt = -1
        self.retries = 0
        # NOrec
        self.snapshot = 0
        # Tiny
        self.lb = 0
        self.ub = 0
        self.owned: dict[int, int] = {}  # orec/lock index -> old version or held-log slot
        mem, tier = stm.mem, stm.cfg.placement
        self.readset = PairLog(mem, tier, *regions["read"], "readset")
        self.writeset = WriteSet(mem, tier, *regions["write"], "writeset")
        self.undo = PairLog(mem, tier, *regions["undo"], "undo log")
        self.locks = PairLog(mem, tier, *regions["locks"], "lock log")
        self.phase_ns = [0] * len(Phase)
        self._mark = 0
        self._rec = stm.recorder

    # -- phase accounting -------------------------------------------------
    def _switch(self, phase: int) -> int:
        now = thread_time_ns()
        ctx = self.ctx
        prev = ctx.phase
        self.phase_ns[prev] += now - self._mark
        self._mark = now
        ctx.phase = phase
        return prev

    # -- lifecycle ----------------------------------------------------------
    def _start(self, attempt: int) -> None:
        self.status = TxState.ACTIVE
        self.attempt = attempt
        self.readset.clear()
        self.writeset.clear()
        self.undo.clear()
        self.locks.clear()
        self.owned.clear()
        ps = self.phase_ns
        for i in range(len(ps)):
            ps[i] = 0
        self._mark = thread_time_ns()
        self.ctx.phase = _START
        if self._rec is not None:
            self._rec.on_begin(self.tid, attempt)
        try:
            self.algo.start(self)
        except BaseException:
            self._rollback()
            raise
        self._switch(_OTHER)

    def _check_active(self):
        if self.status is not TxState.ACTIVE:
            raise StmError(f"transaction is {self.status.value}")

    def load(self, addr: int) -> int:
        if self.status is not TxState.ACTIVE:
            self._check_active()
        if addr & 3 or not self.stm.heap_lo <= addr < self.stm.heap_hi:
            raise InvalidAddress(f"{addr:#x} outside the transactional heap or misaligned")
        prev = self._switch(_READ)
        try:
            value = self.algo.read(self, addr)
        except TxAborted:
            self._rollback()
            raise
        except BaseException:
            self._rollback()
            raise
        self._switch(prev)
        if self._rec is not None:
            self._rec.on_read(self.tid, self.attempt, addr, value)
        return value

    def store(self, addr: int, value: int) -> None:
        if self.status is not TxState.ACTIVE:
            self._check_active()
        if addr & 3 or not self.stm.heap_lo <= addr < self.stm.heap_hi:
            raise InvalidAddress(f"{addr:#x} outside the transactional heap or misaligned")
        value &= 0xFFFFFFFF
        prev = self._switch(_WRITE)
        try:
            self.algo.write(self, addr, value)
        except BaseException:
            self._rollback()
            raise
        self._switch(prev)
        if self._rec is not None:
            self._rec.on_write(self.tid, self.attempt, addr, value)

    def commit(self) -> TxState:
        self._check_active()
        self._switch(_COMMIT)
        try:
            ok = self.algo.commit(self)
        except TxAborted:
            ok = False
        except BaseException:
            self._rollback()
            raise
        if not ok:
            self._rollback()
            return ABORTED
        self._switch(_OTHER)
        self.status = TxState.COMMITTED
        st = self.stm.stats[self.tid]
        ps = self.phase_ns
        pn = st.phase_ns
        pn["start"] += ps[_START]
        pn["read"] += ps[_READ]
        pn["write"] += ps[_WRITE]
        pn["validation"] += ps[Phase.VALIDATE.value]
        pn["commit"] += ps[_COMMIT]
        pn["other"] += ps[_OTHER]
        st.committed += 1
        self.stm._active[self.tid] = None
        if self._rec is not None:
            self._rec.on_commit(self.tid, self.attempt)
        return COMMITTED

    def abort(self):
        """Explicitly abort: roll back and raise :class:`TxAborted`."""
        self._check_active()
        self._rollback()
        raise TxAborted("explicit abort")

    def _rollback(self) -> None:
        if self.status is not TxState.ACTIVE:
            return
        self._switch(_ABORT)
        try:
            self.algo.rollback(self)
        finally:
            self._switch(_OTHER)
            self.status = TxState.ABORTED
            st = self.stm.stats[self.tid]
            st.phase_ns["wasted"] += sum(self.phase_ns)
            st.aborted += 1
            self.stm._active[self.tid] = None
            if self._rec is not None:
                self._rec.on_abort(self.tid, self.attempt)

    def _abort_now(self, why: str = "conflict"):
        """Used by algorithms: signal an abort (rollback happens in the caller)."""
        raise TxAborted(why)


class Heap:
    """Bump allocator over a region of MRAM; host-side, not transactional."""

    def __init__(self, lo: int = 0, hi: int = META_MRAM_BASE):
        self.lo, self.hi = lo, hi
        self.top = lo

    def alloc(self, nbytes: int, align: int = 4) -> int:
        addr = (self.top + align - 1) // align * align
        if addr + nbytes > self.hi:
            raise MemoryError(f"heap exhausted allocating {nbytes} bytes")
        self.top = addr + nbytes
        return addr


class Stm:
    """An STM instance bound to one DPU and one configuration."""

    def __init__(self, dpu: Dpu, cfg: StmConfig, *, heap: tuple[int, int] = (0, META_MRAM_BASE), recorder=None):
        from .variants import make_algorithm

        cfg.validate()
        self.dpu = dpu
        self.mem = dpu.mem
        self.cfg = cfg
        self.recorder = recorder
        self.heap_lo, self.heap_hi = heap
        tier = cfg.placement
        base = cfg.wram_reserved if tier == WRAM else META_MRAM_BASE
        base = (base + 7) // 8 * 8
        self.meta_tier = tier
        self.meta_base = base
        self.seqlock_addr = base  # NOrec sequence lock / Tiny version clock
        self.table_tier = cfg.table_tier
        self.table_mask = cfg.lock_table_entries - 1
        if self.table_tier == tier:
            self.table_base = base + 8
            cursor = self.table_base + 4 * cfg.table_entries
        else:
            self.table_base = META_MRAM_BASE
            cursor = base + 8
        r, w = cfg.capacities
        used = _used_logs(cfg.variant)
        self._regions = []
        for _ in range(cfg.tasklets):
            regions = {}
            for name, cap in (("read", r), ("write", w), ("undo", w), ("locks", w)):
                regions[name] = (cursor, cap if name in used else 0)
                if name in used:
                    cursor += cap * ENTRY_BYTES
            self._regions.append(regions)
        self.meta_end = cursor
        self.algo = make_algorithm(self)
        self.stats = [Stats() for _ in range(cfg.tasklets)]
        self._active: list[Transaction | None] = [None] * cfg.tasklets
        self._tx: list[Transaction | None] = [None] * cfg.tasklets
        self._attempts = [0] * cfg.tasklets
        # Metadata starts zeroed: free locks, clock/sequence lock at 0.
        self.mem.poke_words(tier, self.seqlock_addr, [0, 0])
        self.mem.poke_words(self.table_tier, self.table_base, [0] * cfg.table_entries)

    def lock_index(self, addr: int) -> int:
        return (addr >> 2) & self.table_mask

    def lock_addr(self, idx: int) -> int:
        return self.table_base + 4 * idx

    def descriptor(self, ctx: Tasklet) -> Transaction:
        tx = self._tx[ctx.id]
        if tx is None:
            if ctx.id >= self.cfg.tasklets:
                raise ConfigInvalid(f"tasklet {ctx.id} beyond configured {self.cfg.tasklets}")
            tx = self._tx[ctx.id] = Transaction(self, ctx, self._regions[ctx.id])
        return tx

    def begin(self, ctx: Tasklet) -> Transaction:
        if self._active[ctx.id] is not None:
            raise NestedTransaction(f"tasklet {ctx.id} already has an active transaction")
        tx = self.descriptor(ctx)
        self._active[ctx.id] = tx
        attempt = self._attempts[ctx.id]
        self._attempts[ctx.id] = attempt + 1
        try:
            tx._start(attempt * MAX_TASKLETS + ctx.id)
        except BaseException:
            self._active[ctx.id] = None
            raise
        return tx

    def atomic(self, ctx: Tasklet, body, *args):
        """Run ``body(tx, *args)`` until it commits; return its result."""
        retries = 0
        cap = self.cfg.retry_cap
        while True:
            tx = self.begin(ctx)
            try:
                result = body(tx, *args)
            except TxAborted:
                tx._rollback()
            except BaseException:
                tx._rollback()
                raise
            else:
                if tx.status is not TxState.ACTIVE:
                    raise StmError("transaction body ended the transaction itself")
                if tx.commit() is COMMITTED:
                    tx.retries = retries
                    self.stats[ctx.id].retries[retries] += 1
                    return result
            retries += 1
            if retries > cap:
                raise RetryLimitExceeded(f"tasklet {ctx.id} exceeded {cap} retries")

    def lock_words(self) -> list[int]:
        return self.mem.peek_words(self.table_tier, self.table_base, self.cfg.table_entries)

    def global_word(self) -> int:
        return self.mem.peek32(self.meta_tier, self.seqlock_addr)

    def residue(self) -> list[int]:
        """Indices of lock-table entries still held (should be empty when quiescent)."""
        return self.algo.residue()

    def collect_stats(self, elapsed_ns: int) -> Stats:
        total = Stats(tasklets=self.cfg.tasklets)
        for s in self.stats:
            total.merge(s)
        total.elapsed_ns = elapsed_ns
        total.accesses = accesses_from_counters(self.dpu.counters, self.cfg.tasklets)
        return total


def phase_sum_ok(stats: Stats, resolution_ns: int = 1_000_000) -> bool:
    """Phase times cannot exceed elapsed wall time times the tasklet count."""
    return sum(stats.phase_ns.values()) <= stats.elapsed_ns * stats.tasklets + resolution_ns


def fmean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else 0.0
