"""VR: visible reads through a table of 32-bit reader/writer lock words.

Lock word layout::

    bits 1..0   mode: 00 free, 01 read, 10 write
    read mode   bits 31..26 reader count, bits 25..2 reader bitmask (bit 2+i = tasklet i)
    write mode  bits 31..2 owner token (the owner's tasklet id)

Conflicting requests abort instead of waiting, so no deadlock is possible.
"""

from __future__ import annotations

from typing import NamedTuple

from ..dpu import MAX_TASKLETS, MRAM
from .base import Algorithm

FREE, READ, WRITE = 0, 1, 2
COUNT_SHIFT = 26
COUNT_ONE = 1 << COUNT_SHIFT
MASK_BITS = 0x00FFFFFF << 2


class LockWord(NamedTuple):
    mode: int
    count: int = 0
    readers: int = 0  # bitmask, bit i = tasklet i
    owner: int = 0


def encode(lw: LockWord) -> int:
    if lw.mode == FREE:
        return 0
    if lw.mode == READ:
        if not 1 <= lw.count <= MAX_TASKLETS or bin(lw.readers).count("1") != lw.count:
            raise ValueError(f"inconsistent read lock {lw}")
        return (lw.count << COUNT_SHIFT) | (lw.readers << 2) | READ
    if lw.mode == WRITE:
        return ((lw.owner << 2) | WRITE) & 0xFFFFFFFF
    raise ValueError(f"invalid mode {lw.mode}")


def decode(word: int) -> LockWord:
    mode = word & 3
    if mode == FREE:
        return LockWord(FREE)
    if mode == READ:
        return LockWord(READ, word >> COUNT_SHIFT, (word & MASK_BITS) >> 2)
    if mode == WRITE:
        return LockWord(WRITE, owner=word >> 2)
    raise ValueError(f"corrupt lock word {word:#010x}")


def read_word(tid: int) -> int:
    return COUNT_ONE | (1 << (2 + tid)) | READ


def write_word(tid: int) -> int:
    return (tid << 2) | WRITE


class VisibleReads(Algorithm):
    name = "vr"

    def read(self, tx, addr):
        ctx = tx.ctx
        if self.ctl and tx.writeset.n:
            v = tx.writeset.lookup(ctx, addr)
            if v is not None:
                return v
        ld, tier, tid = self.mem.load32, self.ttier, tx.tid
        idx = (addr >> 2) & self.mask
        la = self.table + 4 * idx
        if self.broken:
            w = ld(tier, la, ctx)
            if w & 3 == WRITE and w >> 2 != tid:
                self.abort("write-locked")
            return ld(MRAM, addr, ctx)
        bit = 1 << (2 + tid)
        while True:
            w = ld(tier, la, ctx)
            mode = w & 3
            if mode == READ:
                if w & bit:
                    break
                new = (w + COUNT_ONE) | bit
            elif mode == FREE:
                new = COUNT_ONE | bit | READ
            else:
                if w >> 2 == tid:
                    if not self.wt:
                        v = tx.writeset.lookup(ctx, addr)
                        if v is not None:
                            return v
                    break
                self.abort("write-locked by another tasklet")
            ok, _ = self.cas(tier, la, w, new, ctx)
            if ok:
                tx.owned[idx] = tx.readset.append(ctx, idx, READ)
                break
        return ld(MRAM, addr, ctx)

    def _acquire_write(self, tx, idx: int) -> None:
        ctx, tid = tx.ctx, tx.tid
        la = self.table + 4 * idx
        sole = read_word(tid)
        while True:
            w = self.mem.load32(self.ttier, la, ctx)
            mode = w & 3
            if mode == WRITE:
                if w >> 2 == tid:
                    return
                self.abort("write-locked by another tasklet")
            if mode == READ and w != sole:
                # Upgrading is only possible for the sole reader.
                self.abort("read-locked by others")
            ok, _ = self.cas(self.ttier, la, w, write_word(tid), ctx)
            if ok:
                slot = tx.owned.get(idx)
                if slot is None:
                    tx.owned[idx] = tx.readset.append(ctx, idx, WRITE)
                else:
                    tx.readset.set_second(ctx, slot, WRITE)
                return

    def write(self, tx, addr, value):
        ctx = tx.ctx
        if self.ctl:
            tx.writeset.put(ctx, addr, value)
            return
        self._acquire_write(tx, (addr >> 2) & self.mask)
        if self.wt:
            tx.undo.append(ctx, addr, self.mem.load32(MRAM, addr, ctx))
            self.mem.store32(MRAM, addr, value, ctx)
        else:
            tx.writeset.put(ctx, addr, value)

    def _release_all(self, tx):
        ctx, tier, table = tx.ctx, self.ttier, self.table
        ld, st = self.mem.load32, self.mem.store32
        bit = 1 << (2 + tx.tid)
        held = tx.readset
        for i in range(held.n):
            idx, mode = held.get(ctx, i)
            la = table + 4 * idx
            if mode == WRITE:
                st(tier, la, 0, ctx)
                continue
            while True:
                w = ld(tier, la, ctx)
                new = 0 if w >> COUNT_SHIFT == 1 else (w - COUNT_ONE) & ~bit
                ok, _ = self.cas(tier, la, w, new, ctx)
                if ok:
                    break
        held.clear()
        tx.owned.clear()

    def commit(self, tx) -> bool:
        ctx = tx.ctx
        ws = tx.writeset
        if self.ctl:
            mask = self.mask
            for i in range(ws.n):
                self._acquire_write(tx, (ws.first(ctx, i) >> 2) & mask)
        if not self.wt:
            st = self.mem.store32
            for i in range(ws.n):
                a, v = ws.get(ctx, i)
                st(MRAM, a, v, ctx)
        self._release_all(tx)
        return True

    def rollback(self, tx):
        ctx = tx.ctx
        if self.wt:
            undo, st = tx.undo, self.mem.store32
            for i in range(undo.n - 1, -1, -1):
                a, old = undo.get(ctx, i)
                st(MRAM, a, old, ctx)
        self._release_all(tx)
