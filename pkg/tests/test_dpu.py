import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from pimstm.dpu import (
    ATOMIC_SLOTS,
    MRAM,
    MRAM_SIZE,
    WRAM,
    WRAM_SIZE,
    Dpu,
    Misaligned,
    OutOfBounds,
    Phase,
    ReleaseNotOwned,
    SelfDeadlock,
    TaskletError,
    TaskletGroup,
    atomic_bit_index,
)


@pytest.fixture
def dpu():
    return Dpu()


def test_fresh_memory_is_zero(dpu):
    assert dpu.mem_load(WRAM, 0, 4, dpu.tasklet(0)) == 0


def test_read_your_write_mram(dpu):
    ctx = dpu.tasklet(0)
    dpu.mem_store(MRAM, 8, 4, 0xDEAD, ctx)
    assert dpu.mem_load(MRAM, 8, 4, ctx) == 0xDEAD


def test_wram_store_then_load(dpu):
    ctx = dpu.tasklet(0)
    dpu.mem_store(WRAM, 4, 4, 7, ctx)
    assert dpu.mem_load(WRAM, 4, 4, ctx) == 7


def test_bounds(dpu):
    ctx = dpu.tasklet(0)
    with pytest.raises(OutOfBounds):
        dpu.mem_load(WRAM, WRAM_SIZE, 4, ctx)
    dpu.mem_store(MRAM, MRAM_SIZE - 4, 4, 1, ctx)
    assert dpu.mem_load(MRAM, MRAM_SIZE - 4, 4, ctx) == 1
    with pytest.raises(OutOfBounds):
        dpu.mem_store(MRAM, MRAM_SIZE, 1, 0, ctx)


def test_misaligned_word(dpu):
    with pytest.raises(Misaligned):
        dpu.mem_load(MRAM, 2, 4, dpu.tasklet(0))


@given(width=st.sampled_from([1, 2, 4, 8]), data=st.data())
def test_width_roundtrip(width, data):
    d = Dpu(mram_size=1 << 16, wram_size=1 << 12)
    ctx = d.tasklet(0)
    addr = data.draw(st.integers(0, (1 << 12) // width - 1)) * width
    value = data.draw(st.integers(0, (1 << (8 * width)) - 1))
    d.mem_store(WRAM, addr, width, value, ctx)
    assert d.mem_load(WRAM, addr, width, ctx) == value


def test_accesses_are_counted_per_phase_and_tier(dpu):
    ctx = dpu.tasklet(3)
    ctx.phase = Phase.READ.value
    dpu.mem_load(MRAM, 0, 4, ctx)
    dpu.mem_load(MRAM, 4, 4, ctx)
    ctx.phase = Phase.COMMIT.value
    dpu.mem_store(WRAM, 0, 4, 1, ctx)
    c = dpu.counters
    assert c.total(tier=MRAM, kind=0, phase=Phase.READ.value, tasklet=3) == 2
    assert c.total(tier=WRAM, kind=1, phase=Phase.COMMIT.value) == 1
    assert c.total() == 3
    dpu.reset_counters()
    assert c.total() == 0


def test_peek_poke_uncounted(dpu):
    dpu.mem.poke_words(MRAM, 16, [1, 2, 3])
    assert dpu.mem.peek_words(MRAM, 16, 3) == [1, 2, 3]
    assert dpu.counters.total() == 0


def test_hash_formula():
    assert atomic_bit_index(0) == 0
    assert atomic_bit_index(0x400) == 0x01
    # The declared formula sends 0x2000 to slot 8, not 0.
    assert atomic_bit_index(0x2000) == 8


def test_hash_has_collisions():
    seen = {}
    for a in range(0, 1 << 16, 4):
        s = atomic_bit_index(a)
        if s in seen:
            assert seen[s] != a
            return
        seen[s] = a
    pytest.fail("no aliasing pair found")


@given(st.integers(0, MRAM_SIZE - 1))
def test_hash_range(a):
    assert 0 <= atomic_bit_index(a) < ATOMIC_SLOTS


def test_acquire_release(dpu):
    dpu.atomic.acquire(64, 0)
    assert dpu.atomic.owner(64) == 0
    dpu.atomic.release(64, 0)
    assert dpu.atomic.owner(64) is None


def test_release_not_owned(dpu):
    with pytest.raises(ReleaseNotOwned):
        dpu.atomic.release(64, 1)


def test_self_deadlock(dpu):
    dpu.atomic.acquire(64, 0)
    with pytest.raises(SelfDeadlock):
        dpu.atomic.acquire(64, 0)


def test_second_acquirer_blocks_until_release(dpu):
    order = []
    dpu.atomic.acquire(64, 0)

    def t1():
        dpu.atomic.acquire(64, 1)
        order.append("t1 owns")
        dpu.atomic.release(64, 1)

    th = threading.Thread(target=t1)
    th.start()
    time.sleep(0.02)
    order.append("t0 releases")
    dpu.atomic.release(64, 0)
    th.join(5)
    assert order == ["t0 releases", "t1 owns"]


def test_cas(dpu):
    ctx = dpu.tasklet(0)
    dpu.mem.poke32(MRAM, 0, 5)
    assert dpu.cas32(MRAM, 0, 5, 7, ctx) == (True, 5)
    assert dpu.mem.peek32(MRAM, 0) == 7
    dpu.mem.poke32(MRAM, 0, 6)
    assert dpu.cas32(MRAM, 0, 5, 7, ctx) == (False, 6)
    assert dpu.mem.peek32(MRAM, 0) == 6


def cas_increment(dpu, addr, ctx):
    while True:
        old = dpu.mem.load32(MRAM, addr, ctx)
        if dpu.cas32(MRAM, addr, old, old + 1, ctx)[0]:
            return


def test_cas_stress_8x1000(dpu):
    def entry(ctx):
        for _ in range(1000):
            cas_increment(dpu, 128, ctx)

    dpu.run_tasklets(8, entry)
    assert dpu.mem.peek32(MRAM, 128) == 8000


def test_run_tasklets_results(dpu):
    assert dpu.run_tasklets(1, lambda ctx: 42) == [42]
    assert dpu.run_tasklets(11, lambda ctx: ctx.id) == list(range(11))


def test_too_many_tasklets(dpu):
    with pytest.raises(ValueError):
        TaskletGroup(dpu, 25, lambda ctx: None)


def test_tasklet_failure_is_reported(dpu):
    def entry(ctx):
        if ctx.id == 2:
            raise KeyError("boom")
        return ctx.id

    with pytest.raises(TaskletError) as info:
        dpu.run_tasklets(4, entry)
    assert isinstance(info.value.__cause__, KeyError)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 255), st.integers(0, 2**32 - 1)), min_size=1, max_size=20))
def test_image_reflects_stores(writes):
    d = Dpu(mram_size=1 << 12)
    ctx = d.tasklet(0)
    expected = {}
    for w, v in writes:
        d.mem.store32(MRAM, 4 * w, v, ctx)
        expected[w] = v
    img = d.mem.image(MRAM, 0, 1024)
    for w, v in expected.items():
        assert int.from_bytes(img[4 * w : 4 * w + 4], "little") == v
