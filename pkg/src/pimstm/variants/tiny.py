"""Tiny: ownership records with a global version clock and invisible reads.

Orec word layout: bit 0 is the lock bit.  A free orec holds ``version << 1``;
a locked one holds ``(owner tasklet << 1) | 1``.  Versions are 31 bits and
wraparound is not handled.
"""

from __future__ import annotations

from ..dpu import MRAM
from .base import VALIDATE, Algorithm


class Tiny(Algorithm):
    name = "tiny"

    def start(self, tx):
        tx.lb = tx.ub = self.mem.load32(self.tier, self.clock, tx.ctx)

    def _readset_valid(self, tx) -> bool:
        ld, tier, table, ctx, tid = self.mem.load32, self.ttier, self.table, tx.ctx, tx.tid
        rs = tx.readset
        for i in range(rs.n):
            idx, ver = rs.get(ctx, i)
            o = ld(tier, table + 4 * idx, ctx)
            if o & 1:
                if o >> 1 != tid or tx.owned.get(idx) != ver:
                    return False
            elif o >> 1 != ver:
                return False
        return True

    def extend(self, tx) -> bool:
        """Move the snapshot upper bound to the current clock if all reads still hold."""
        prev = tx._switch(VALIDATE)
        try:
            now = self.mem.load32(self.tier, self.clock, tx.ctx)
            if self.broken or self._readset_valid(tx):
                tx.ub = now
                return True
            return False
        finally:
            tx._switch(prev)

    def read(self, tx, addr):
        ctx = tx.ctx
        if self.ctl and tx.writeset.n:
            v = tx.writeset.lookup(ctx, addr)
            if v is not None:
                return v
        ld, tier = self.mem.load32, self.ttier
        idx = (addr >> 2) & self.mask
        la = self.table + 4 * idx
        for _ in range(2):
            o1 = ld(tier, la, ctx)
            if o1 & 1:
                if o1 >> 1 == tx.tid and not self.ctl:
                    if not self.wt:
                        v = tx.writeset.lookup(ctx, addr)
                        if v is not None:
                            return v
                    return ld(MRAM, addr, ctx)
                self.abort("orec locked")
            v = ld(MRAM, addr, ctx)
            if ld(tier, la, ctx) != o1:
                continue
            ver = o1 >> 1
            if ver > tx.ub:
                if not self.extend(tx):
                    self.abort("extension failed")
                # The value was not covered by the extension; recheck it.
                if ld(tier, la, ctx) != o1:
                    continue
            tx.readset.append(ctx, idx, ver)
            return v
        self.abort("orec changed during read")

    def _lock(self, tx, idx: int, la: int) -> None:
        ctx = tx.ctx
        o = self.mem.load32(self.ttier, la, ctx)
        if o & 1:
            self.abort("orec locked")
        ver = o >> 1
        if ver > tx.ub and not self.extend(tx):
            self.abort("extension failed")
        ok, _ = self.cas(self.ttier, la, o, (tx.tid << 1) | 1, ctx)
        if not ok:
            self.abort("orec cas failed")
        tx.locks.append(ctx, idx, ver)
        tx.owned[idx] = ver

    def write(self, tx, addr, value):
        ctx = tx.ctx
        if self.ctl:
            tx.writeset.put(ctx, addr, value)
            return
        idx = (addr >> 2) & self.mask
        if idx not in tx.owned:
            self._lock(tx, idx, self.table + 4 * idx)
        if self.wt:
            tx.undo.append(ctx, addr, self.mem.load32(MRAM, addr, ctx))
            self.mem.store32(MRAM, addr, value, ctx)
        else:
            tx.writeset.put(ctx, addr, value)

    def _fetch_inc_clock(self, ctx) -> int:
        ld, tier, clock = self.mem.load32, self.tier, self.clock
        while True:
            c = ld(tier, clock, ctx)
            ok, _ = self.cas(tier, clock, c, c + 1, ctx)
            if ok:
                return c + 1

    def commit(self, tx) -> bool:
        ctx = tx.ctx
        if self.ctl:
            ws = tx.writeset
            if not ws.n:
                return True
            for i in range(ws.n):
                idx = (ws.first(ctx, i) >> 2) & self.mask
                if idx not in tx.owned:
                    # Commit-time locking: versions newer than ub are caught by validation.
                    la = self.table + 4 * idx
                    o = self.mem.load32(self.ttier, la, ctx)
                    if o & 1:
                        self.abort("orec locked at commit")
                    ok, _ = self.cas(self.ttier, la, o, (tx.tid << 1) | 1, ctx)
                    if not ok:
                        self.abort("orec cas failed at commit")
                    tx.locks.append(ctx, idx, o >> 1)
                    tx.owned[idx] = o >> 1
        elif not tx.locks.n:
            return True
        wv = self._fetch_inc_clock(ctx)
        if tx.ub != wv - 1:
            prev = tx._switch(VALIDATE)
            try:
                valid = self._readset_valid(tx)
            finally:
                tx._switch(prev)
            if not valid:
                self.abort("commit validation failed")
        st = self.mem.store32
        if not self.wt:
            ws = tx.writeset
            for i in range(ws.n):
                a, v = ws.get(ctx, i)
                st(MRAM, a, v, ctx)
        locks, tier, table = tx.locks, self.ttier, self.table
        for i in range(locks.n):
            st(tier, table + 4 * locks.first(ctx, i), wv << 1, ctx)
        tx.owned.clear()
        return True

    def rollback(self, tx):
        ctx = tx.ctx
        st = self.mem.store32
        locks = tx.locks
        release_version = None
        if self.wt and tx.undo.n:
            undo = tx.undo
            for i in range(undo.n - 1, -1, -1):
                a, old = undo.get(ctx, i)
                st(MRAM, a, old, ctx)
            # Readers may have sampled the orec before we locked it and then
            # seen our in-place value; a fresh version makes their recheck fail.
            release_version = self._fetch_inc_clock(ctx)
        for i in range(locks.n):
            idx, old = locks.get(ctx, i)
            ver = old if release_version is None else release_version
            st(self.ttier, self.table + 4 * idx, ver << 1, ctx)
        tx.owned.clear()

    def residue(self) -> list[int]:
        return [i for i, w in enumerate(self.stm.lock_words()) if w & 1]
