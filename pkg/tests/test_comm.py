import random
import threading
import time

import pytest
from hypothesis import given, strategies as st

from rioflow.comm import (DEFAULT_DMA, ChannelDecl, DmaModel, Fifo, Register, Status, create_channel,
                          create_channels, dma_transfer_schedule, fifo_read, fifo_write, reg_read, reg_write)
from rioflow.errors import RioflowError
from rioflow.types import F64, I32, Value, cluster


def test_boundary_fifo_gets_dma():
    ch = create_channel(ChannelDecl("a", "fifo", I32, 16, "host", "fabric"))
    assert ch.dma == DEFAULT_DMA == DmaModel(8, 1, 4)


def test_host_fifo_has_no_dma():
    assert create_channel(ChannelDecl("a", "fifo", I32, 16, "host", "host")).dma is None


def test_duplicate_channel():
    d = ChannelDecl("a", "fifo", I32, 4, "host", "host")
    with pytest.raises(RioflowError) as e:
        create_channels([d, d])
    assert e.value.code == "E_DUP_CHANNEL"


def test_capacity_law():
    q = Fifo("q", I32, 2)
    assert fifo_write(q, Value(I32, 1)) is Status.OK
    assert fifo_write(q, Value(I32, 2)) is Status.OK
    assert fifo_write(q, Value(I32, 3), timeout=0) is Status.TIMEOUT
    assert [fifo_read(q)[1].payload for _ in range(2)] == [1, 2]


def test_empty_read_times_out():
    assert fifo_read(Fifo("q", I32, 2), timeout=0) == (Status.TIMEOUT, None)


def test_wrong_element_type():
    with pytest.raises(RioflowError):
        fifo_write(Fifo("q", I32, 2), Value(F64, 1.0))


def test_register_initial_and_latest():
    r = Register("r", I32, 7)
    assert reg_read(r).payload == 7
    reg_write(r, Value(I32, 5))
    assert reg_read(r).payload == 5


def test_dma_schedule_formula():
    assert dma_transfer_schedule(1, DmaModel(8, 1, 4)) == [12]
    assert dma_transfer_schedule(3, DmaModel(0, 1, 1)) == [1, 2, 3]
    assert dma_transfer_schedule(0) == []


def test_dma_arrival_matches_schedule():
    q = Fifo("q", I32, 16, DmaModel(8, 1, 4))
    for v in range(6):
        q.try_write(v)
    arrivals = []
    for t in range(40):
        while q.try_read()[0]:
            arrivals.append(t)
        q.advance()
    assert arrivals == dma_transfer_schedule(6, DmaModel(8, 1, 4))


@given(st.lists(st.booleans(), max_size=400), st.integers(1, 8), st.integers(0, 2**32))
def test_fifo_linearizable(ops, cap, seed):
    rng = random.Random(seed)
    q = Fifo("q", I32, cap, DmaModel(rng.randint(0, 5), rng.randint(1, 2), rng.randint(1, 4)))
    sent, got, k = [], [], 0
    for is_write in ops:
        if is_write:
            if q.try_write(k):
                sent.append(k)
            k += 1
        else:
            ok, v = q.try_read()
            if ok:
                got.append(v)
        assert 0 <= q.occupancy <= q.capacity + q.in_flight
        assert len(q) <= q.capacity
        q.advance(rng.randint(0, 2))
    assert got == sent[:len(got)]


def test_fifo_spsc_threads():
    q = Fifo("q", I32, 64)
    n = 5000
    got = []

    def produce():
        for i in range(n):
            while not q.try_write(i):
                time.sleep(0)

    def consume():
        while len(got) < n:
            ok, v = q.try_read()
            if ok:
                got.append(v)
            else:
                time.sleep(0)

    ts = [threading.Thread(target=produce), threading.Thread(target=consume)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert got == list(range(n))


def test_register_atomic_clusters():
    t = cluster(I32, I32, I32)
    r = Register("r", t)
    written = {(0, 0, 0)}

    def writer(base):
        for i in range(5000):
            v = (base + i,) * 3
            written.add(v)
            r.write(v)

    reads = []

    def reader():
        last = -1
        while len(reads) < 10_000:
            seq, v = r.read_versioned()
            assert seq >= last
            last = seq
            reads.append(v)

    ws = [threading.Thread(target=writer, args=(b,)) for b in (0, 1_000_000)]
    rd = threading.Thread(target=reader)
    for x in ws + [rd]:
        x.start()
    for x in ws + [rd]:
        x.join()
    assert all(v[0] == v[1] == v[2] for v in reads)
    assert set(reads) <= written
