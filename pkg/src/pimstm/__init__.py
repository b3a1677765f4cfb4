"""Software transactional memory on a simulated processing-in-memory DPU."""

from .core import (
    ALL_VARIANTS,
    ConfigInvalid,
    StmConfig,
    Stats,
    Stm,
    StmError,
    TxAborted,
    Variant,
    design_variant,
)
from .dpu import MRAM, WRAM, Dpu, Phase
from .oracle import HistoryLog, SerialStm, check_serializable, doomed_snapshot_check, serial_replay

__version__ = "0.1.0"

__all__ = [
    "ALL_VARIANTS", "ConfigInvalid", "StmConfig", "Stats", "Stm", "StmError", "TxAborted",
    "Variant", "design_variant", "MRAM", "WRAM", "Dpu", "Phase",
    "HistoryLog", "SerialStm", "check_serializable", "doomed_snapshot_check", "serial_replay",
]
