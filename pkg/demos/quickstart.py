"""Run a few transactions by hand, then a small ArrayBench on every variant."""

from pimstm import ALL_VARIANTS, MRAM, Dpu, Stm, StmConfig
from pimstm.bench import ArrayBench, run_workload


def transfer(tx, src, dst, amount):
    a = tx.load(src)
    if a < amount:
        return False
    tx.store(src, a - amount)
    tx.store(dst, tx.load(dst) + amount)
    return True


def by_hand():
    dpu = Dpu()
    stm = Stm(dpu, StmConfig(variant="tiny_etlwt", tasklets=4))
    dpu.mem.poke_words(MRAM, 0, [100, 0])

    def entry(ctx):
        return sum(stm.atomic(ctx, transfer, 0, 4, 3) for _ in range(10))

    moved = dpu.run_tasklets(4, entry)
    print("transfers per tasklet:", moved, "balances:", dpu.mem.peek_words(MRAM, 0, 2))


def compare():
    print(f"{'variant':12} {'placement':9} {'commits':>7} {'aborts':>6} {'mram/commit':>11}")
    for v in ALL_VARIANTS:
        for placement in ("wram", "mram"):
            res = run_workload(ArrayBench("A", seed=1, txns_per_tasklet=40),
                               StmConfig(variant=v, placement=placement), tasklets=4, oracle=True)
            assert res.ok
            s = res.stats
            print(f"{v.value:12} {placement:9} {s.committed:7} {s.aborted:6} {s.tier_accesses('mram') / s.committed:11.1f}")


if __name__ == "__main__":
    by_hand()
    compare()
