import itertools
import threading

import pytest
from hypothesis import given, settings, strategies as st

from pimstm import ALL_VARIANTS, HistoryLog, StmConfig, check_serializable, doomed_snapshot_check, serial_replay
from pimstm.bench import ArrayBench, KMeans, LinkedList, kmeans_reference, run_workload
from pimstm.oracle import Event, SearchSpaceExceeded, small_history


def log_of(txns, overlap=True):
    """Build a log; txns = [[(kind, addr, value), ...], ...].

    With ``overlap`` every transaction begins before any commits, so real
    time constrains nothing; otherwise they run back to back.
    """
    log = HistoryLog()
    if overlap:
        for i, _ in enumerate(txns):
            log.record(i, i, "begin")
        for i, ops in enumerate(txns):
            for kind, a, v in ops:
                log.record(i, i, kind, a, v)
        for i, _ in enumerate(txns):
            log.record(i, i, "commit")
    else:
        for i, ops in enumerate(txns):
            log.record(i, i, "begin")
            for kind, a, v in ops:
                log.record(i, i, kind, a, v)
            log.record(i, i, "commit")
    return log


def brute_force(txns) -> bool:
    """Independent oracle: try every permutation from an all-zero memory."""
    for perm in itertools.permutations(txns):
        mem, ok = {}, True
        for ops in perm:
            local = {}
            for kind, a, v in ops:
                if kind == "write":
                    local[a] = v
                elif local.get(a, mem.get(a, 0)) != v:
                    ok = False
                    break
            if not ok:
                break
            mem.update(local)
        if ok:
            return True
    return False


def test_record_single():
    log = HistoryLog()
    log.record(0, 0, "begin")
    assert len(log) == 1


def test_record_concurrent():
    log = HistoryLog()

    def worker(t):
        for i in range(500):
            log.record(t, i, "read", 4 * i, i)

    threads = [threading.Thread(target=worker, args=(t,)) for t in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert len(log) == 2000
    assert len({e.seq for e in log.events}) == 2000


def test_seq_ascending():
    log = HistoryLog()
    for i in range(1000):
        log.record(0, i, "begin")
    assert [e.seq for e in log.events] == list(range(1000))


def test_ndjson_roundtrip():
    log = log_of([[("write", 0, 1)], [("read", 0, 1)]], overlap=False)
    again = HistoryLog.from_ndjson(log.to_ndjson())
    assert again.events == log.events
    assert isinstance(again.events[0], Event)


def test_single_tx_ok():
    res = check_serializable(log_of([[("read", 0, 0), ("write", 0, 1)]]))
    assert res.ok and res.order == [0]


def test_write_then_read_ok():
    res = check_serializable(log_of([[("write", 0, 1)], [("read", 0, 1)]], overlap=False))
    assert res.ok and res.order == [0, 1]


def test_phantom_read_rejected():
    res = check_serializable(log_of([[("write", 0, 2)], [("read", 0, 1)]]))
    assert not res.ok
    assert res.conflict[0] == "phantom-read"


def test_lost_update_rejected():
    # both read 0 then write: no serial order explains it
    res = check_serializable(log_of([[("read", 0, 0), ("write", 0, 1)], [("read", 0, 0), ("write", 0, 2)]]))
    assert not res.ok
    assert res.conflict == ("pair", 0, 1)


def test_real_time_order_is_respected():
    # T1 reads the initial value after T0 committed: fine concurrently, wrong back to back.
    txns = [[("write", 0, 1)], [("read", 0, 0)]]
    assert check_serializable(log_of(txns, overlap=True)).ok
    assert not check_serializable(log_of(txns, overlap=False)).ok


def test_aborted_attempts_ignored():
    log = HistoryLog()
    log.record(0, 0, "begin")
    log.record(0, 0, "read", 0, 99)
    log.record(0, 0, "abort")
    assert check_serializable(log).ok
    assert log.well_formed()


def test_bounds():
    log = log_of([[("read", 4 * i, 0)] for i in range(9)])
    with pytest.raises(SearchSpaceExceeded):
        check_serializable(log)
    log = log_of([[("read", 0, 0)]] * 31)
    with pytest.raises(SearchSpaceExceeded):
        check_serializable(log)


op = st.tuples(st.sampled_from(["read", "write"]), st.sampled_from([0, 4]), st.integers(0, 2))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.lists(op, min_size=1, max_size=4), min_size=2, max_size=2))
def test_agrees_with_brute_force_on_pairs(txns):
    assert check_serializable(log_of(txns)).ok == brute_force(txns)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(op, min_size=1, max_size=3), min_size=3, max_size=4))
def test_agrees_with_brute_force_on_small_sets(txns):
    assert check_serializable(log_of(txns)).ok == brute_force(txns)


def test_doomed_snapshot_check():
    log = HistoryLog()
    log.record(0, 0, "begin")
    log.record(0, 0, "read", 0, 3)
    log.record(0, 0, "abort")
    log.record(1, 1, "begin")
    log.record(1, 1, "read", 0, 4)
    log.record(1, 1, "commit")
    assert doomed_snapshot_check(lambda reads: all(v % 2 == 0 for _, v in reads), log) == [0]


def test_serial_runs_have_no_doomed_snapshots():
    wl = ArrayBench("A", seed=2, txns_per_tasklet=40)
    res = run_workload(wl, None, tasklets=4, serial=True, oracle=True)
    assert res.doomed == 0 and res.ok


def test_serial_logs_are_serializable():
    log = HistoryLog()
    wl = ArrayBench("B", seed=3, txns_per_tasklet=7, n=8, k=8)
    run_workload(wl, None, tasklets=4, serial=True, recorder=log)
    assert len(log.committed()) == 28
    res = check_serializable(log, {a: 1000 for a in range(0, 32, 4)})
    assert res.ok


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_small_histories_serializable(variant):
    for seed in range(5):
        log = small_history(StmConfig(variant=variant), seed)
        assert log.well_formed()
        assert check_serializable(log).ok


def test_broken_norec_is_caught():
    cfg = StmConfig(variant="norec", broken=True)
    assert any(not check_serializable(small_history(cfg, s)).ok for s in range(200))


def test_broken_variant_violates_doomed_snapshots():
    wl = ArrayBench("A", seed=1, txns_per_tasklet=150)
    res = run_workload(wl, StmConfig(variant="tiny_etlwb", broken=True), tasklets=11, oracle=True)
    assert res.doomed > 0


def test_serial_replay_arraybench_conserves():
    wl = ArrayBench("A", seed=5, txns_per_tasklet=200)
    res = serial_replay(wl)
    assert sum(res.outcome) == wl.initial_sum


def test_serial_replay_kmeans_matches_reference():
    wl = KMeans("LC", seed=4, points=600)
    res = serial_replay(wl)
    cents, tables = kmeans_reference(wl.points, wl.points[: wl.cfg.k], wl.cfg.rounds)
    assert res.outcome["centroids"] == tuple(tuple(map(int, r)) for r in cents)


def test_serial_replay_linkedlist_is_deterministic():
    a = serial_replay(LinkedList("HC"), seed=9)
    b = serial_replay(LinkedList("HC"), seed=9)
    assert a.outcome == b.outcome
    assert list(a.outcome) == sorted(a.outcome)
