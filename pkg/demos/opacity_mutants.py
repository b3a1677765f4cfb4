"""Show the oracles catching the deliberately broken variants.

Each mutant drops one safety step: NOrec skips revalidation, Tiny skips
extension validation, VR skips read locking.
"""

import sys

from pimstm import ALL_VARIANTS, StmConfig, check_serializable
from pimstm.bench import ArrayBench, run_workload
from pimstm.oracle import small_history

histories = int(sys.argv[1]) if len(sys.argv) > 1 else 30

for v in ALL_VARIANTS:
    for broken in (False, True):
        cfg = StmConfig(variant=v, broken=broken)
        bad = sum(not check_serializable(small_history(cfg, s)).ok for s in range(histories))
        res = run_workload(ArrayBench("A", seed=7, txns_per_tasklet=100), cfg, tasklets=11, oracle=True)
        tag = "broken " if broken else "correct"
        print(f"{v.value:11} {tag}  non-serializable histories {bad:3}/{histories}  "
              f"doomed snapshots {res.doomed:5}  final-state problems {len(res.violations)}")
