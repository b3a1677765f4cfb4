"""MRAM traffic per transactional read on an uncontended list traversal.

NOrec re-reads one sequence lock; Tiny reads the orec twice around the value.
"""

from pimstm import ALL_VARIANTS
from pimstm.bench import mram_accesses_per_load

for v in ALL_VARIANTS:
    print(f"{v.label:10} {mram_accesses_per_load(v):.2f} MRAM accesses per tx_load")
