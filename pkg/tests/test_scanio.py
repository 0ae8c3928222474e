import threading

import pytest
from conftest import flat

from rioflow.comm import Fifo
from rioflow.cosim import cosimulate
from rioflow.elaborate import partition_diagnostics
from rioflow.errors import RioflowError
from rioflow.gtext import ParseError, parse
from rioflow.scanio import (IoState, ScanChannel, ScanConfig, VirtualAO, dac_emit, eng_convert, eng_to_raw, jitter,
                            load_stimulus_csv, ramp, scan_tick, ticks_per_sample)
from rioflow.types import I32


class Logged:
    """Ramp source that records every code it hands out."""

    def __init__(self, start):
        self.f = ramp(start, 1)
        self.log = {}

    def __call__(self, k):
        v = self.f(k)
        self.log[k] = v
        return v


def _cfg(n):
    return ScanConfig(1000, tuple(ScanChannel(f"ai{i}", "in", gain=1.0) for i in range(n)))


def test_two_ramps_share_one_index():
    src = {"ai0": Logged(0), "ai1": Logged(1000)}
    io = IoState(src)
    for _ in range(100):
        s = scan_tick(_cfg(2), io)
        assert s.raw == {"ai0": src["ai0"].log[s.index], "ai1": src["ai1"].log[s.index]}


def test_zero_channels_still_count():
    io = IoState()
    a, b, c = (scan_tick(ScanConfig(500), io) for _ in range(3))
    assert dict(a.values) == {}
    assert (b.index, c.index) == (a.index + 1, a.index + 2)
    assert c.timestamp_us == c.index * 500


def test_concurrent_readers_see_whole_snapshots():
    cfg = _cfg(4)
    io = IoState({f"ai{i}": ramp(100 * i) for i in range(4)})
    scan_tick(cfg, io)
    bad = []
    done = threading.Event()

    def reader():
        while not done.is_set():
            s = io.latest()
            codes = [s.raw[f"ai{i}"] - 100 * i for i in range(4)]
            if len(set(codes)) != 1 or codes[0] != s.index:
                bad.append(s.index)

    t = threading.Thread(target=reader)
    t.start()
    for _ in range(3000):
        scan_tick(cfg, io)
    done.set()
    t.join()
    assert bad == []


def test_eng_units():
    assert eng_convert(0, 1, 0) == 0.0
    assert eng_convert(32767, 10 / 32768, 0) == pytest.approx(9.99969, abs=1e-5)


@pytest.mark.parametrize("gain,offset", [(10 / 32768, 0.0), (0.001, -2.5), (1.0, 0.0)])
def test_eng_round_trip_exhaustive(gain, offset):
    assert all(eng_to_raw(eng_convert(c, gain, offset), gain, offset) == c for c in range(-32768, 32768))


def test_eng_to_raw_saturates():
    assert eng_to_raw(1e9, 1.0, 0.0) == 32767 and eng_to_raw(-1e9, 1.0, 0.0) == -32768


def test_outputs_are_logged_each_scan():
    cfg = ScanConfig(1000, (ScanChannel("ao0", "out", gain=0.5),))
    io = IoState()
    io.write_output("ao0", 1.25)
    scan_tick(cfg, io)
    assert io.output_log == [(0, "ao0", 1.0)]      # quantized to the 0.5 step


def test_stimulus_csv(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("tick,channel,raw_value\n0,ai0,5\n3,ai0,-7\n")
    src = load_stimulus_csv(f)["ai0"]
    assert [src(k) for k in range(5)] == [5, 5, 5, -7, -7]


@pytest.mark.parametrize("clk,fs,tps", [(40e6, 44100, 907), (1e6, 44100, 23), (44100, 44100, 1)])
def test_ticks_per_sample(clk, fs, tps):
    assert ticks_per_sample(clk, fs) == tps == round(clk / fs)


def test_dac_zero_jitter_and_hold_last():
    buf = Fifo("ao", I32, 8)
    ao = VirtualAO("dac", 44100, 1e6, buf)
    for v in (1, 2, 3):
        buf.try_write(v)
    for t in range(23 * 6):
        dac_emit(ao, t)
    assert [v for _, v in ao.log] == [1, 2, 3, 3, 3, 3]
    assert ao.underruns == 3
    assert jitter(ao) == [0] * 5


SCAN_HEAD = """clock fpga 40000000 Hz
scan period {period} us
scan in ai0: i32 gain 1.0 offset 0.0
scan out ao0: i32 gain 1.0 offset 0.0
"""


def _scan_project(body, period=1000):
    return SCAN_HEAD.format(period=period) + "vi T {\n" + body + "\n}\ntop T\n"


def test_scan_read_in_timed_loop_is_rejected_by_the_parser():
    text = _scan_project("  sctl L clock fpga {\n    shift s: f64 = 0.0\n    node r: ScanRead(channel=ai0)\n"
                         "    wire r.value -> s\n  }")
    with pytest.raises(ParseError) as e:
        parse(text)
    assert e.value.code == "E_SCTL_ILLEGAL_NODE"


def test_fabric_scan_read_is_an_ownership_error():
    text = _scan_project("  indicator o: f64\n  node r: ScanRead(channel=ai0) target fabric\n  wire r.value -> o")
    plan, diags = partition_diagnostics(flat(text))
    assert plan is None and "E_CHANNEL_OWNERSHIP" in [d.code for d in diags]


def test_two_writers_of_one_scan_output():
    text = _scan_project("  node k: Const(value=1.0)\n  node w1: ScanWrite(channel=ao0)\n"
                         "  node w2: ScanWrite(channel=ao0)\n  wire k.out -> w1.value\n  wire k.out -> w2.value")
    _, diags = partition_diagnostics(flat(text))
    assert "E_CHANNEL_OWNERSHIP" in [d.code for d in diags]


def test_scan_name_clash_with_channel():
    text = "channel ai0 fifo<i32, 4> host -> host\n" + _scan_project("")
    with pytest.raises(ParseError) as e:
        parse(text)
    assert e.value.code == "E_CHANNEL_OWNERSHIP"


@pytest.mark.parametrize("period,ok", [(1000, True), (250, True), (7, False), (300, False)])
def test_scan_period_must_divide_a_second(period, ok):
    p = flat(_scan_project("  node r: ScanRead(channel=ai0)\n  indicator o: f64\n  wire r.value -> o", period))
    if ok:
        assert cosimulate(p, nticks=2).trace.ticks == 2
    else:
        with pytest.raises(RioflowError) as e:
            cosimulate(p, nticks=2)
        assert e.value.code == "E_SCAN_PERIOD"
