"""NOrec: one global sequence lock, value-based validation, write-back."""

from __future__ import annotations

from ..core import TxAborted
from ..dpu import MRAM
from .base import VALIDATE, Algorithm


class NOrec(Algorithm):
    name = "norec"

    def _wait_even(self, tx) -> int:
        ld, tier, seq, ctx = self.mem.load32, self.tier, self.clock, tx.ctx
        while True:
            s = ld(tier, seq, ctx)
            if not s & 1:
                return s
            self.pause()

    def start(self, tx):
        # A busy lock delays the start: cheap contention management.
        tx.snapshot = self._wait_even(tx)

    def validate(self, tx) -> int:
        """Wait for a quiescent lock, recheck every read by value; return the new snapshot."""
        prev = tx._switch(VALIDATE)
        try:
            ld, ctx, rs = self.mem.load32, tx.ctx, tx.readset
            while True:
                t = self._wait_even(tx)
                if not self.broken:
                    for i in range(rs.n):
                        a, v = rs.get(ctx, i)
                        if ld(MRAM, a, ctx) != v:
                            raise TxAborted("value changed")
                if ld(self.tier, self.clock, ctx) == t:
                    return t
        finally:
            tx._switch(prev)

    def read(self, tx, addr):
        ctx = tx.ctx
        if tx.writeset.n:
            v = tx.writeset.lookup(ctx, addr)
            if v is not None:
                return v
        ld, tier, seq = self.mem.load32, self.tier, self.clock
        v = ld(MRAM, addr, ctx)
        while ld(tier, seq, ctx) != tx.snapshot:
            tx.snapshot = self.validate(tx)
            v = ld(MRAM, addr, ctx)
        tx.readset.append(ctx, addr, v)
        return v

    def write(self, tx, addr, value):
        tx.writeset.put(tx.ctx, addr, value)

    def commit(self, tx) -> bool:
        ws = tx.writeset
        if not ws.n:
            return True
        ctx, tier, seq = tx.ctx, self.tier, self.clock
        while True:
            ok, _ = self.cas(tier, seq, tx.snapshot, tx.snapshot + 1, ctx)
            if ok:
                break
            tx.snapshot = self.validate(tx)
        st = self.mem.store32
        for i in range(ws.n):
            a, v = ws.get(ctx, i)
            st(MRAM, a, v, ctx)
        # Only the holder writes an odd lock, so a plain store releases it.
        st(tier, seq, tx.snapshot + 2, ctx)
        return True

    def residue(self) -> list[int]:
        return [-1] if self.stm.global_word() & 1 else []
