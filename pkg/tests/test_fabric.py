import json
import random

import pytest
from conftest import COUNTER, flat
from gen import sctl_project
from harness import host_vs_fabric
from hypothesis import given, strategies as st

from rioflow.comm import Fifo
from rioflow.cosim import cosimulate
from rioflow.elaborate import DepthTable, TypeEnv
from rioflow.fabric import (ZERO, ResourceEstimate, Simulator, compile_sctl, estimate, generate, hls_estimate,
                            merge, op_cost, register_cost, simulate)
from rioflow.gtext import load_project
from rioflow.ip import IpDescriptor, import_ip
from rioflow.types import I32


def _netlist(text, **kw):
    p = flat(text)
    return compile_sctl(p.top_vi.diagram.node("L"), env=TypeEnv.of(p), **kw)


FMF = """\
clock fpga 40000000 Hz
channel a fifo<i32, 16> host -> fabric
channel b fifo<i32, 16> fabric -> host
vi T {
  sctl L clock fpga {
    node r: FifoRead(channel=a)
    node m: Mul
    node w: FifoWrite(channel=b)
    wire r.value -> m.x
    wire r.value -> m.y
    wire m.prod -> w.value
  }
}
top T
"""

EMPTY = "clock fpga 40000000 Hz\nvi T { sctl L clock fpga { } }\ntop T\n"


# ------------------------------------------------------------------ compile

def test_counter_netlist_shape():
    nl = _netlist(COUNTER)
    assert len(nl.registers) == 1
    assert [n.op for n in nl.ops].count("Add") == 1
    src, _ = generate(nl)
    assert "_w32(" in src


def test_empty_sctl():
    nl = _netlist(EMPTY)
    assert nl.ops == () and nl.registers == ()
    assert estimate(nl) == ZERO == ResourceEstimate(0, 0, 0, 0)


def test_fifo_mul_fifo():
    nl = _netlist(FMF)
    assert len(nl.channel_ports) == 2
    assert sum(op_cost(n, DepthTable()).dsp > 0 for n in nl.ops) == 1


# ---------------------------------------------------------------- simulate

def test_counter_register_sequence():
    tr = simulate([_netlist(COUNTER)], nticks=5)
    assert tr.register_stream("L.c") == [0, 1, 2, 3, 4]
    assert tr.output_stream("L.c") == [1, 2, 3, 4, 5]


def test_one_tick_latency_law():
    # the value latched at tick k is what the body reads at tick k + 1
    tr = simulate([_netlist(COUNTER)], nticks=50)
    assert tr.register_stream("L.c")[1:] == tr.output_stream("L.c")[:-1]


def test_two_clocks_on_lcm_grid():
    text = "clock a 10 Hz\nclock b 15 Hz\nvi T {\n" + "".join(
        f"  sctl {n} clock {c} {{ shift s: i32 = 0  node k: Const(value=1)  node i: Add "
        f" wire s -> i.x  wire k.out -> i.y  wire i.sum -> s }}\n" for n, c in (("A", "a"), ("B", "b"))) + "}\ntop T\n"
    p = flat(text)
    env = TypeEnv.of(p)
    nls = [compile_sctl(p.top_vi.diagram.node(n), clock_hz=hz, env=env) for n, hz in (("A", 10), ("B", 15))]
    sim = Simulator(nls)
    assert sim.grid_hz == 30
    tr = sim.run(30)
    assert tr.latches == {"A": 10, "B": 15}
    a_ticks = [r.tick for r in tr.records if "A.s" in r.outputs]
    b_ticks = [r.tick for r in tr.records if "B.s" in r.outputs]
    assert a_ticks == list(range(0, 30, 3)) and b_ticks == list(range(0, 30, 2))


def test_simulation_is_deterministic():
    text = sctl_project(random.Random(7), fifo=True)
    assert host_vs_fabric(text, 200, 3)[1] == host_vs_fabric(text, 200, 3)[1]


@given(st.integers(0, 2**32))
def test_host_fabric_equivalence(seed):
    text = sctl_project(random.Random(seed), fifo=seed % 2 == 0)
    host, fabric = host_vs_fabric(text, 200, seed)
    assert host == fabric


def test_overflow_is_an_event():
    text = """\
clock fpga 40000000 Hz
channel q fifo<i32, 2> fabric -> fabric
vi T { sctl L clock fpga { node k: Const(value=3)  node w: FifoWrite(channel=q)  wire k.out -> w.value } }
top T
"""
    from rioflow.comm import create_channels

    p = flat(text)
    ch = create_channels(p.channels)
    tr = simulate([compile_sctl(p.top_vi.diagram.node("L"), env=TypeEnv.of(p))], nticks=5, channels=ch)
    assert [e[1] for e in tr.events] == ["E_OVERFLOW"] * 3
    assert ch["q"].overflows == 3 and len(ch["q"]) == 2


# ---------------------------------------------------------------- estimates

def test_single_add_is_its_table_row():
    nl = _netlist(COUNTER)
    t = DepthTable()
    add = next(n for n in nl.ops if n.op == "Add")
    assert op_cost(add, t) == ResourceEstimate(lut=32)
    assert estimate(nl) == op_cost(add, t) + register_cost(nl.registers[0], t) == ResourceEstimate(32, 32, 0, 0)


def test_fifo_buffer_bram():
    # 16 x 4 bytes rounds up to one block
    assert estimate(_netlist(FMF)) == ResourceEstimate(0, 0, 1, 1)


@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_estimate_is_additive(s1, s2):
    a = _netlist(sctl_project(random.Random(s1)), check=False)
    b = _netlist(sctl_project(random.Random(s2)), check=False)
    assert estimate(merge(a, b)) == estimate(a) + estimate(b)


def test_hls_model():
    body = _netlist("clock fpga 40000000 Hz\nvi T { sctl L clock fpga { shift s: i32 = 1 " + "".join(
        f" node m{i}: Mul  wire s -> m{i}.x  wire s -> m{i}.y" for i in range(4)) + " wire m3.prod -> s } }\ntop T",
        check=False).body
    r1, r4 = hls_estimate(body, 1), hls_estimate(body, 4)
    assert (r1.ii, r1.resources.dsp) == (4, 1)
    assert (r4.ii, r4.resources.dsp) == (1, 4)
    assert hls_estimate(_netlist(COUNTER).body, 3).ii == 1


# ----------------------------------------------------------------------- IP

IDENT = {"name": "ident", "style": "IPIN", "latency": 3, "behavior": {"kind": "linear", "A": [], "C": [[]], "D": [[1]]},
         "ports": [{"name": "x", "type": "i32", "direction": "in"}, {"name": "y", "type": "i32", "direction": "out"}]}
ADDER = {"name": "adder", "style": "IPIN", "latency": 0, "depth_ns": 5, "behavior": {"kind": "linear", "A": [], "C": [[]], "D": [[1, 1]]},
         "ports": [{"name": "a", "type": "i32", "direction": "in"}, {"name": "b", "type": "i32", "direction": "in"},
                   {"name": "s", "type": "i32", "direction": "out"}]}
CLIPCOUNT = {"name": "cc", "style": "CLIP", "clock": "fpga", "behavior": {"kind": "linear", "A": [[1]], "c": [1]},
             "ports": [{"name": "count", "type": "i32", "direction": "out"}]}


def test_ipin_delay_line():
    u = import_ip(IDENT).fabric_unit()
    out = []
    for x in [1, 2, 3, 0, 0, 0]:
        out.append(u.eval(x)[0])
        u.latch()
    assert out == [0, 0, 0, 1, 2, 3]


def test_clip_counter():
    c = import_ip(CLIPCOUNT, {"fpga": 1000})
    for _ in range(10):
        c.tick()
    assert c.pins["count"] == 10


def _project(tmp_path, text, *descs):
    for d in descs:
        (tmp_path / f"{d['name']}.json").write_text(json.dumps(d))
    f = tmp_path / "p.gtext"
    f.write_text(text)
    return load_project(f)


def test_ipin_add_matches_builtin(tmp_path):
    def text(node):
        return f"""clock fpga 40000000 Hz
ip adder "adder.json"
vi T {{ sctl L clock fpga {{ param p: i32  shift s: i32 = 1  node n: {node}
  wire s -> n.{'a' if 'Ip' in node else 'x'}  wire p -> n.{'b' if 'Ip' in node else 'y'}
  wire n.{'s' if 'Ip' in node else 'sum'} -> s }}  control p: i32  wire p -> L.p }}
top T
"""
    outs = []
    for node in ("Ip(name=adder)", "Add"):
        p = _project(tmp_path, text(node), ADDER)
        res = cosimulate(p, inputs={"p": 7}, nticks=20)
        outs.append(res.trace.output_stream("L.s"))
    assert outs[0] == outs[1] == [1 + 7 * k for k in range(1, 21)]


STALLED = """clock fpga 40000000 Hz
ip cc "cc.json"
channel q fifo<i32, 4> host -> fabric
vi T {
  indicator last: i32
  sctl L clock fpga {
    shift v: i32 = 42
    node r: FifoRead(channel=q)
    node s: Select
    wire r.ok -> s.s
    wire r.value -> s.t
    wire v -> s.f
    wire s.out -> v
  }
  wire L.v -> last
}
top T
"""


def test_clip_runs_while_sctl_stalls(tmp_path):
    res = cosimulate(_project(tmp_path, STALLED, CLIPCOUNT), nticks=5)
    assert [r.pins["cc.count"] for r in res.trace.records] == [1, 2, 3, 4, 5]
    assert set(res.trace.output_stream("L.v")) == {42}
    assert res.channels["q"].underruns == 5


PAIR = """clock fpga 1000 Hz
channel q fifo<i32, 1> fabric -> fabric
vi T {
  sctl W clock fpga {
    shift c: i32 = 0
    node one: Const(value=1)
    node inc: Add
    node w: FifoWrite(channel=q)
    wire c -> inc.x
    wire one.out -> inc.y
    wire inc.sum -> c
    wire c -> w.value
  }
  sctl R clock fpga {
    shift got: i32 = -1
    node r: FifoRead(channel=q)
    node s: Select
    wire r.ok -> s.s
    wire r.value -> s.t
    wire got -> s.f
    wire s.out -> got
  }
}
top T
"""


@pytest.mark.parametrize("writer", ["W", "A", "Z"])
def test_same_tick_read_precedes_write(writer):
    # q starts full; the reader drains it in the same tick the writer pushes
    p = flat(PAIR.replace("sctl W", f"sctl {writer}"))
    env = TypeEnv.of(p)
    nls = [compile_sctl(n, clock_hz=1000, env=env) for n in p.top_vi.diagram.nodes]
    ch = {"q": Fifo("q", I32, 1)}
    ch["q"].try_write(99)
    trace = simulate(nls, {}, 5, channels=ch)
    assert trace.output_stream("R.got") == [99, 0, 1, 2, 3]
    assert ch["q"].overflows == 0
