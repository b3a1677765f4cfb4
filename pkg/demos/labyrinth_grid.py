"""Route a small Labyrinth instance with 4 tasklets and draw one layer."""

from pimstm import StmConfig
from pimstm.bench import Labyrinth, run_workload
from pimstm.bench.labyrinth import RESERVED

wl = Labyrinth("S", seed=3, paths=25)
res = run_workload(wl, StmConfig(variant="tiny_etlwb"), tasklets=4, oracle=True, keep_dpu=True)
print(f"routed {len(wl.routes)} of {len(wl.job_list)} jobs, {res.stats.aborted} aborts, problems: {res.violations}")

grid = wl.grid(res.dpu)
cfg = wl.cfg
glyphs = "0123456789abcdefghijklmnopqrstuvwxyz"
for y in range(cfg.y):
    row = []
    for x in range(cfg.x):
        v = grid[cfg.index(x, y, 0)]
        row.append("." if v == 0 else "#" if v & RESERVED else glyphs[(v - 1) % len(glyphs)])
    print("".join(row))
