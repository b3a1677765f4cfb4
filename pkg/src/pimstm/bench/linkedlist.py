"""Sorted singly-linked list of 32-bit keys with add/remove/contains transactions."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..core import Heap
from ..dpu import MRAM, Dpu
from .common import Workload, tasklet_rng

CONTAINS, ADD, REMOVE = 0, 1, 2
HEAD_KEY = 0
TAIL_KEY = 0xFFFFFFFF
NODE_BYTES = 8  # key word, next word


@dataclass(frozen=True)
class LinkedListConfig:
    initial_size: int = 10
    ops_per_tasklet: int = 100
    contains_fraction: float = 0.9
    key_range: int = 20

    def __post_init__(self):
        if not 0 <= self.contains_fraction <= 1:
            raise ValueError("contains_fraction must be in [0, 1]")
        if self.initial_size > self.key_range:
            raise ValueError("key_range too small for the initial list")


WORKLOADS = {
    "LC": LinkedListConfig(contains_fraction=0.9),
    "HC": LinkedListConfig(contains_fraction=0.5),
}


def list_op(tx, head: int, op: int, key: int, node: int = 0) -> bool:
    """contains -> found; add -> inserted; remove -> removed."""
    load = tx.load
    prev = head
    cur = load(prev + 4)
    ck = load(cur)
    while ck < key:
        prev = cur
        cur = load(cur + 4)
        ck = load(cur)
    if op == CONTAINS:
        return ck == key
    if op == ADD:
        if ck == key:
            return False
        tx.store(node + 4, cur)
        tx.store(prev + 4, node)
        return True
    if ck != key:
        return False
    tx.store(prev + 4, load(cur + 4))
    return True


class LinkedList(Workload):
    name = "linkedlist"

    def __init__(self, cfg: LinkedListConfig | str = "LC", seed: int = 0, **overrides):
        super().__init__(seed)
        if isinstance(cfg, str):
            self.tag = cfg.upper()
            cfg = WORKLOADS[self.tag]
        else:
            self.tag = "LC" if cfg.contains_fraction >= 0.75 else "HC"
        self.cfg = replace(cfg, **overrides) if overrides else cfg
        self.results: dict[int, list] = {}

    def setup(self, dpu: Dpu, heap: Heap) -> None:
        import random

        cfg = self.cfg
        mem = dpu.mem
        self.results = {}
        self.base = heap.alloc(NODE_BYTES * (2 + cfg.initial_size), align=8)
        self.head = self.base
        self.tail = self.base + NODE_BYTES
        keys = sorted(random.Random(self.seed).sample(range(1, cfg.key_range + 1), cfg.initial_size))
        self.initial = keys
        nodes = [self.base + NODE_BYTES * (2 + i) for i in range(len(keys))]
        chain = [self.head] + nodes + [self.tail]
        for key, node in zip([HEAD_KEY] + keys, chain):
            mem.poke32(MRAM, node, key)
        for a, b in zip(chain, chain[1:]):
            mem.poke32(MRAM, a + 4, b)
        mem.poke32(MRAM, self.tail, TAIL_KEY)
        mem.poke32(MRAM, self.tail + 4, 0)
        # private node pools, one node per potential add
        self.pools = [heap.alloc(NODE_BYTES * cfg.ops_per_tasklet, align=8) for _ in range(24)]

    def plan(self, tid: int) -> list[tuple[int, int]]:
        cfg = self.cfg
        rng = tasklet_rng(self.seed, tid)
        ops, next_update = [], ADD
        for _ in range(cfg.ops_per_tasklet):
            key = rng.randint(1, cfg.key_range)
            if rng.random() < cfg.contains_fraction:
                ops.append((CONTAINS, key))
            else:
                ops.append((next_update, key))
                next_update = REMOVE if next_update == ADD else ADD
        return ops

    def execute(self, stm, dpu: Dpu, tasklets: int) -> None:
        head = self.head

        def entry(ctx):
            pool = self.pools[ctx.id]
            out = []
            for i, (op, key) in enumerate(self.plan(ctx.id)):
                node = pool + NODE_BYTES * i
                if op == ADD:
                    dpu.mem.store32(MRAM, node, key, ctx)
                out.append((op, key, stm.atomic(ctx, list_op, head, op, key, node)))
            return out

        for tid, res in enumerate(dpu.run_tasklets(tasklets, entry)):
            self.results[tid] = res

    def keys(self, dpu: Dpu, limit: int = 1_000_000) -> list[int]:
        mem = dpu.mem
        out = []
        node = mem.peek32(MRAM, self.head + 4)
        while node != self.tail:
            if len(out) > limit or node == 0:
                raise RuntimeError("list is cyclic or broken")
            out.append(mem.peek32(MRAM, node))
            node = mem.peek32(MRAM, node + 4)
        return out

    def outcome(self, dpu: Dpu):
        return tuple(self.keys(dpu))

    def verify(self, dpu: Dpu) -> list[str]:
        try:
            keys = self.keys(dpu)
        except RuntimeError as exc:
            return [str(exc)]
        problems = []
        if any(b <= a for a, b in zip(keys, keys[1:])):
            problems.append("list not strictly sorted")
        adds = sum(1 for res in self.results.values() for op, _, ok in res if op == ADD and ok)
        removes = sum(1 for res in self.results.values() for op, _, ok in res if op == REMOVE and ok)
        expected = self.cfg.initial_size + adds - removes
        if len(keys) != expected:
            problems.append(f"size {len(keys)} != {self.cfg.initial_size} + {adds} - {removes}")
        return problems

    def invariant(self, reads) -> bool:
        """Keys met during one traversal strictly increase."""
        last = -1
        base = self.base
        for addr, v in reads:
            if (addr - base) % NODE_BYTES == 0 and addr != self.head:
                if v <= last:
                    return False
                last = v
        return True


class _LoadCounter:
    """Recorder that only counts transactional loads."""

    def __init__(self):
        self.loads = 0

    def on_read(self, *_):
        self.loads += 1

    def on_begin(self, *_):
        pass

    on_write = on_commit = on_abort = on_begin


def mram_accesses_per_load(variant, seed: int = 0, ops: int = 100) -> float:
    """MRAM accesses (loads + stores) spent in the read phase per tx_load.

    Uncontended contains-only traversals, one tasklet, metadata in MRAM.
    Counted: the data word, lock/seqlock words and readset entry words.
    Not counted: readset/writeset membership lookups (host-side index).
    """
    from ..core import StmConfig
    from .common import run_workload

    counter = _LoadCounter()
    wl = LinkedList("LC", seed=seed, contains_fraction=1.0, ops_per_tasklet=ops)
    res = run_workload(wl, StmConfig(variant=variant, placement=MRAM), tasklets=1, recorder=counter)
    return sum(res.stats.accesses["read"]["mram"].values()) / counter.loads
