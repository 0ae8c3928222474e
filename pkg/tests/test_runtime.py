import random

import numpy as np
import pytest
from conftest import ADD2, bitwise, flat
from gen import host_project
from hypothesis import given, strategies as st

from rioflow.errors import RioflowError
from rioflow.primitives import biquad, fire
from rioflow.runtime import Env, ExecConfig, run
from rioflow.types import BOOL, F64, I32, Value, array


def _run(text, inputs, seed=0, trace=False, **cfg):
    p = flat(text)
    return run(p.top_vi.diagram, inputs, ExecConfig(seed=seed, trace=trace, **cfg), Env.for_project(p))


def _out(text, inputs, **kw):
    return {k: v.payload for k, v in _run(text, inputs, **kw)[0].items()}


def test_add2():
    assert _out(ADD2, {"a": 2.0, "b": 3.0}) == {"s": 5.0}


DIAMOND = """\
vi D {
  control a: i32
  indicator o: i32
  node b: Add
  node c: Mul
  node d: Sub
  wire a -> b.x
  wire a -> b.y
  wire a -> c.x
  wire a -> c.y
  wire b.sum -> d.x
  wire c.prod -> d.y
  wire d.diff -> o
}
"""


def test_diamond_is_seed_independent():
    outs = {repr(_out(DIAMOND, {"a": 7}, seed=s)) for s in range(1, 101)}
    assert outs == {repr({"o": 14 - 49})}


def test_scheduler_actually_varies_order():
    orders = {tuple(_run(DIAMOND, {"a": 1}, seed=s, trace=True)[1].nodes()) for s in range(20)}
    assert len(orders) > 1


def test_div_by_zero_names_node():
    text = "vi V { control a: i32  indicator o: i32  node n: Div  wire a -> n.x  node z: Const(value=0) " \
           " wire z.out -> n.y  wire n.quot -> o }"
    with pytest.raises(RioflowError) as e:
        _run(text, {"a": 1})
    assert e.value.code == "E_RUNTIME" and e.value.ref == "n"
    assert e.value.details["cause"] == "div_by_zero"


def test_select():
    assert fire("Select", [Value(BOOL, True), Value(I32, 7), Value(I32, 9)])[0].payload == 7


def _for(n, init, step):
    return f"""vi V {{
  indicator o: i32
  node n: Const(value={n})
  for L {{
    shift acc: i32 = {init}
    node one: Const(value={step})
    node s: Add
    wire acc -> s.x
    wire one.out -> s.y
    wire s.sum -> acc
  }}
  wire n.out -> L.N
  wire L.acc -> o
}}"""


def test_for_zero_iterations_keeps_init():
    assert _out(_for(0, 5, 1), {}) == {"o": 5}


def test_for_four_iterations():
    assert _out(_for(4, 0, 1), {}) == {"o": 4}


WHILE = """vi V {
  control lim: i32
  indicator o: i32
  while W {
    shift acc: i32 = 0
    control m: i32
    indicator stop: bool
    node one: Const(value=1)
    node s: Add
    node g: Lt
    wire acc -> s.x
    wire one.out -> s.y
    wire s.sum -> acc
    wire m -> g.x
    wire s.sum -> g.y
    wire g.out -> stop
  }
  wire lim -> W.m
  wire W.acc -> o
}"""


def test_while_runs_until_stop():
    # do-while: stops once acc exceeds lim
    assert _out(WHILE, {"lim": 3}) == {"o": 4}
    assert _out(WHILE, {"lim": -10}) == {"o": 1}


def test_while_iteration_limit():
    with pytest.raises(RioflowError) as e:
        _out(WHILE, {"lim": 10_000}, max_firings=500)
    assert e.value.code == "E_LIMIT"


CASE = """vi V {
  control k: i32
  indicator o: i32
  case C: i32 default 0 {
    control v: i32
    indicator r: i32
    branch 0 { node z: Const(value=0)  wire z.out -> r }
    branch 1 { node p: Add  wire v -> p.x  wire v -> p.y  wire p.sum -> r }
    branch 2 { node q: Mul  wire v -> q.x  wire v -> q.y  wire q.prod -> r }
  }
  node seven: Const(value=7)
  wire k -> C.selector
  wire seven.out -> C.v
  wire C.r -> o
}"""


def test_case_fires_only_selected_branch():
    outs, trace = _run(CASE, {"k": 2}, trace=True)
    assert outs["o"].payload == 49
    inner = [n for n in trace.nodes() if n.startswith("C[")]
    assert inner == ["C[2]/q"]


def test_case_default_branch():
    assert _out(CASE, {"k": 9}) == {"o": 0}


def test_fifo_read_without_writer_deadlocks():
    text = "channel q fifo<i32, 2> host -> host\nvi V { indicator o: i32  node r: FifoRead(channel=q)  " \
           "wire r.value -> o }"
    with pytest.raises(RioflowError) as e:
        _run(text, {})
    assert e.value.code == "E_DEADLOCK"


def test_zero_length_array_ops_are_empty():
    t = array(F64, 0)
    assert fire("Add", [Value(t, ()), Value(t, ())])[0].payload == ()


# -------------------------------------------------------------------- biquad

def test_biquad_identity_and_gain():
    x = tuple(float(v) for v in np.random.default_rng(0).normal(size=32))
    assert tuple(biquad(x, 1.0, 0.0, 0.0, 0.0, 0.0)[0]) == x
    imp = (1.0,) + (0.0,) * 7
    assert tuple(biquad(imp, 0.5, 0.0, 0.0, 0.0, 0.0)[0]) == tuple(0.5 * v for v in imp)


def _direct_form_1(x, b0, b1, b2, a1, a2):
    y, x1, x2, y1, y2 = [], 0.0, 0.0, 0.0, 0.0
    for v in x:
        out = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2
        y.append(out)
        x2, x1, y2, y1 = x1, v, y1, out
    return y


@given(st.integers(0, 2**32))
def test_biquad_matches_difference_equation(seed):
    rng = np.random.default_rng(seed)
    # poles inside the unit circle
    r, th = rng.uniform(0, 0.95), rng.uniform(0, np.pi)
    a1, a2 = float(-2 * r * np.cos(th)), float(r * r)
    b = [float(v) for v in rng.uniform(-1, 1, 3)]
    x = rng.normal(size=64)
    got = biquad(tuple(x), *b, a1, a2)[0]
    want = _direct_form_1(x, *b, a1, a2)
    assert np.max(np.abs(np.array(got) - want)) <= 1e-12


# --------------------------------------------------------------- properties

INPUTS = {"a": 11, "b": -4, "x": 1.5, "y": -0.25, "f": False}


@given(st.integers(0, 2**32))
def test_determinacy_on_random_diagrams(seed):
    text = host_project(random.Random(seed))
    ref = None
    for s in range(10):
        outs, trace = _run(text, INPUTS, seed=s, trace=True)
        tokens = {}
        for f in trace:
            tokens.setdefault(f.node, []).append(bitwise((f.consumed, f.produced)))
        got = (bitwise({k: v.payload for k, v in outs.items()}), tokens)
        assert ref is None or got == ref
        ref = got


@given(st.integers(0, 2**32))
def test_token_conservation(seed):
    text = host_project(random.Random(seed), structures=False)
    p = flat(text)
    _, trace = _run(text, INPUTS, seed=seed, trace=True)
    fired = {}
    for f in trace:
        fired[f.node] = fired.get(f.node, 0) + 1
    for w in p.top_vi.diagram.wires:
        made = fired[w.src.node] if w.src.node else 1
        for d in w.dsts:
            assert (fired[d.node] if d.node else 1) == made


@given(st.sampled_from(["Add", "Sub", "Mul", "Gt", "Lt", "Eq"]), st.floats(allow_nan=False, width=64),
       st.floats(allow_nan=False, width=64))
def test_fire_is_pure(op, a, b):
    ins = [Value(F64, a), Value(F64, b)]
    assert bitwise(fire(op, ins)[0].payload) == bitwise(fire(op, ins)[0].payload)
