from __future__ import annotations

import time

from ..core import TxAborted
from ..dpu import DpuHalted, Phase

VALIDATE = Phase.VALIDATE.value


class Algorithm:
    """Shared plumbing for the concurrency-control algorithms.

    Subclasses implement ``start``, ``read``, ``write``, ``commit`` (returns a
    bool, or raises :class:`TxAborted`) and ``rollback``.
    """

    name = "?"

    def __init__(self, stm):
        self.stm = stm
        self.mem = stm.mem
        self.tier = stm.meta_tier
        self.ttier = stm.table_tier
        self.cas = stm.dpu.cas32
        self.clock = stm.seqlock_addr
        self.table = stm.table_base
        self.mask = stm.table_mask
        self.broken = stm.cfg.broken
        self._halted = stm.dpu.halted
        v = stm.cfg.variant
        self.ctl = v.ctl
        self.wt = v.write_through

    def pause(self):
        if self._halted.is_set():
            raise DpuHalted("another tasklet failed")
        time.sleep(0)

    def lock_addr(self, addr: int) -> tuple[int, int]:
        idx = (addr >> 2) & self.mask
        return idx, self.table + 4 * idx

    def start(self, tx):
        pass

    def rollback(self, tx):
        pass

    def residue(self) -> list[int]:
        return [i for i, w in enumerate(self.stm.lock_words()) if w & 3]

    @staticmethod
    def abort(why="conflict"):
        raise TxAborted(why)
