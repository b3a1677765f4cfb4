import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pimstm import ALL_VARIANTS, MRAM, Dpu, Stm, StmConfig, serial_replay
from pimstm.bench import (
    ArrayBench,
    KMeans,
    KMeansConfig,
    Labyrinth,
    LabyrinthConfig,
    LinkedList,
    NoPathExists,
    bfs_path,
    kmeans_reference,
    list_op,
    load_instance,
    make_workload,
    multi_dpu_kmeans,
    multi_dpu_labyrinth,
    run_workload,
    sequential_merge_oracle,
)
from pimstm.bench.kmeans import centroids_from, kmeans_assign_and_update, nearest, round_accumulators
from pimstm.bench.labyrinth import dump_instance
from pimstm.bench.linkedlist import ADD, CONTAINS, REMOVE
from pimstm.core import Heap


class Recorder:
    def __init__(self):
        self.reads = {}

    def on_begin(self, tid, attempt):
        self.reads[attempt] = 0

    def on_read(self, tid, attempt, addr, value):
        self.reads[attempt] += 1

    def on_write(self, *a):
        pass

    on_commit = on_abort = on_write


# -- ArrayBench ----------------------------------------------------------------

@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_arraybench_single_tasklet_conserves(variant):
    wl = ArrayBench("A", seed=1, txns_per_tasklet=300)
    res = run_workload(wl, StmConfig(variant=variant), tasklets=1)
    assert res.ok and sum(res.outcome) == wl.initial_sum
    assert res.stats.aborted == 0


def test_arraybench_norec_concurrent_oracle():
    wl = ArrayBench("A", seed=2, txns_per_tasklet=60)
    res = run_workload(wl, StmConfig(variant="norec"), tasklets=11, oracle=True)
    assert res.ok and res.doomed == 0 and res.stats.committed == 660


def test_arraybench_b_touches_four_entries():
    rec = Recorder()
    run_workload(ArrayBench("B", seed=1, txns_per_tasklet=50), StmConfig(variant="tiny_etlwb"), tasklets=1, recorder=rec)
    assert set(rec.reads.values()) == {4}


def test_arraybench_invariant_detects_torn_pair():
    wl = ArrayBench("B")
    wl.setup(Dpu(), Heap())
    assert wl.invariant([(0, 1000), (4, 1000)])
    assert not wl.invariant([(0, 1010), (4, 1000)])


# -- Linked-List ---------------------------------------------------------------

def list_stm(keys):
    wl = LinkedList("LC", initial_size=0, key_range=20)
    dpu = Dpu()
    wl.setup(dpu, Heap())
    stm = Stm(dpu, StmConfig(variant="tiny_etlwb"))
    ctx = dpu.tasklet(0)
    for i, k in enumerate(keys):
        node = wl.pools[0] + 8 * i
        dpu.mem.poke32(MRAM, node, k)
        assert stm.atomic(ctx, list_op, wl.head, ADD, k, node)
    return wl, dpu, stm, ctx


def test_list_contains_absent():
    wl, dpu, stm, ctx = list_stm([1, 5, 9])
    assert wl.keys(dpu) == [1, 5, 9]
    assert not stm.atomic(ctx, list_op, wl.head, CONTAINS, 7)


def test_list_add_then_contains():
    wl, dpu, stm, ctx = list_stm([7])
    assert stm.atomic(ctx, list_op, wl.head, CONTAINS, 7)
    assert stm.atomic(ctx, list_op, wl.head, REMOVE, 7)
    assert not stm.atomic(ctx, list_op, wl.head, CONTAINS, 7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([CONTAINS, ADD, REMOVE]), st.integers(1, 20)), max_size=40))
def test_list_matches_python_set(ops):
    wl, dpu, stm, ctx = list_stm([])
    model = set()
    for i, (op, k) in enumerate(ops):
        node = wl.pools[1] + 8 * i
        dpu.mem.poke32(MRAM, node, k)
        got = stm.atomic(ctx, list_op, wl.head, op, k, node)
        if op == CONTAINS:
            assert got == (k in model)
        elif op == ADD:
            assert got == (k not in model)
            model.add(k)
        else:
            assert got == (k in model)
            model.discard(k)
    assert wl.keys(dpu) == sorted(model)


@pytest.mark.parametrize("variant", [v for v in ALL_VARIANTS if v.value != "vr_ctlwb"])
def test_list_hc_concurrent(variant):
    res = run_workload(LinkedList("HC", seed=3, ops_per_tasklet=40), StmConfig(variant=variant), tasklets=11, oracle=True)
    assert res.ok, res.violations


def test_list_hc_vr_ctlwb_four_tasklets():
    res = run_workload(LinkedList("HC", seed=3, ops_per_tasklet=40), StmConfig(variant="vr_ctlwb"), tasklets=4, oracle=True)
    assert res.ok, res.violations


# -- KMeans --------------------------------------------------------------------

def test_nearest_ties_go_to_lowest_id():
    cents = np.array([[5, 5], [1, 1], [1, 1]])
    assert nearest([1, 1], cents) == 1
    assert nearest([3, 3], np.array([[1, 1], [5, 5]])) == 0


def test_assign_and_update_point_on_centroid():
    dpu = Dpu()
    stm = Stm(dpu, StmConfig())
    cents = np.array([[10, 10], [20, 20]])
    cid = stm.atomic(dpu.tasklet(0), kmeans_assign_and_update, [20, 20], cents, 0)
    assert cid == 1
    assert dpu.mem.peek_words(MRAM, 0, 6) == [0, 0, 0, 20, 20, 1]


def test_centroids_from_keeps_empty_clusters():
    acc = np.array([[10, 20, 2], [0, 0, 0]])
    old = np.array([[1, 1], [7, 7]])
    assert centroids_from(acc, old).tolist() == [[5, 10], [7, 7]]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_round_accumulators_count_every_point(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 100, size=(50, 3))
    acc = round_accumulators(pts, pts[:4])
    assert acc[:, -1].sum() == 50
    assert (acc[:, :-1].sum(axis=0) == pts.sum(axis=0)).all()


def test_kmeans_matches_reference_concurrently():
    wl = KMeans("HC", seed=1, points=400)
    res = run_workload(wl, StmConfig(variant="tiny_etlwb"), tasklets=4)
    assert res.ok, res.violations
    cents, _ = kmeans_reference(wl.points, wl.points[:2], wl.cfg.rounds)
    assert res.outcome["centroids"] == tuple(tuple(map(int, r)) for r in cents)


def test_kmeans_one_tasklet_equals_serial_replay():
    wl = KMeans("LC", seed=6, points=300)
    golden = serial_replay(wl)
    res = run_workload(wl, StmConfig(variant="vr_etlwt"), tasklets=1)
    assert res.outcome == golden.outcome


# -- Labyrinth -----------------------------------------------------------------

def test_bfs_corner_to_corner():
    cfg = LabyrinthConfig(16, 16, 3, paths=1)
    src, dst = cfg.index(0, 0, 0), cfg.index(15, 15, 2)
    path = bfs_path(cfg, [0] * cfg.cells, src, dst)
    assert len(path) == 15 + 15 + 2 + 1


def test_bfs_walled_in():
    cfg = LabyrinthConfig(4, 4, 1, paths=1)
    grid = [0] * cfg.cells
    for n in cfg.neighbors(0):
        grid[n] = 9
    with pytest.raises(NoPathExists):
        bfs_path(cfg, grid, 0, cfg.cells - 1)


def grid_graph(cfg):
    g = nx.Graph()
    for c in range(cfg.cells):
        g.add_edges_from((c, n) for n in cfg.neighbors(c))
    return g


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_bfs_agrees_with_networkx_on_blocked_grids(seed):
    import random

    rng = random.Random(seed)
    cfg = LabyrinthConfig(6, 5, 2, paths=1)
    grid = [1 if rng.random() < 0.3 else 0 for _ in range(cfg.cells)]
    src, dst = rng.sample(range(cfg.cells), 2)
    grid[src] = grid[dst] = 0
    g = grid_graph(cfg).subgraph([c for c in range(cfg.cells) if grid[c] == 0])
    try:
        expected = nx.shortest_path_length(g, src, dst) + 1
    except nx.NetworkXNoPath:
        with pytest.raises(NoPathExists):
            bfs_path(cfg, grid, src, dst)
        return
    path = bfs_path(cfg, grid, src, dst)
    assert len(path) == expected
    assert all(grid[c] == 0 for c in path)


def test_instance_file_roundtrip(tmp_path):
    wl = Labyrinth("S", seed=4)
    f = tmp_path / "maze.txt"
    f.write_text(dump_instance(wl.cfg, wl.jobs))
    cfg, jobs = load_instance(f)
    assert (cfg.x, cfg.y, cfg.z) == (16, 16, 3) and jobs == wl.jobs


@pytest.mark.parametrize("text", ["", "4 4\n", "4 4 1\nsrc 0 0 0 dst 9 0 0\n", "4 4 1\n0 0 0 1 1 0\n0 0 0 2 2 0\n"])
def test_bad_instance_files(tmp_path, text):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(ValueError):
        load_instance(f)


def test_labyrinth_concurrent_structure():
    res = run_workload(Labyrinth("S", seed=2, paths=40), StmConfig(variant="tiny_etlwb"), tasklets=4, oracle=True)
    assert res.ok, res.violations


# -- multi-DPU -----------------------------------------------------------------

def test_multi_dpu_kmeans_single_dpu_is_plain_run():
    cfg = KMeansConfig(k=4, points=300)
    res = multi_dpu_kmeans(1, cfg, seed=3)
    wl = KMeans(cfg, seed=3)
    cents, _ = kmeans_reference(wl.points, wl.points[:4], cfg.rounds)
    assert (res.centroids == cents).all()


def test_multi_dpu_kmeans_matches_oracle_small():
    cfg = KMeansConfig(k=3, points=200)
    res = multi_dpu_kmeans(3, cfg, StmConfig(variant="tiny_ctlwb"), seed=1, tasklets=3)
    cents, tables = sequential_merge_oracle(cfg, 3, seed=1)
    assert not res.violations
    assert (res.centroids == cents).all()
    assert all((a == b).all() for a, b in zip(res.tables, tables))
    assert res.total_count == 600


def test_multi_dpu_labyrinth_same_seed():
    res = multi_dpu_labyrinth(2, "S", StmConfig(), seeds=[5, 5], tasklets=1, keep_dpu=True)
    assert res.routed_counts[0] == res.routed_counts[1]
    a, b = (r.dpu for r in res.instances)
    assert a is not b and a.mem is not b.mem


def test_make_workload():
    assert make_workload("linkedlist", "hc").tag == "HC"
    with pytest.raises(ValueError):
        make_workload("nope")
