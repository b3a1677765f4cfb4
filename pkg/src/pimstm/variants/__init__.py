"""The seven concurrency-control algorithms."""

from .norec import NOrec
from .tiny import Tiny
from .vr import VisibleReads, decode, encode, LockWord

_FAMILIES = {"norec": NOrec, "tiny": Tiny, "vr": VisibleReads}


def make_algorithm(stm):
    return _FAMILIES[stm.cfg.variant.family](stm)


__all__ = ["NOrec", "Tiny", "VisibleReads", "LockWord", "encode", "decode", "make_algorithm"]
