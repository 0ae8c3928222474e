import itertools

import pytest
from hypothesis import given, strategies as st

from rioflow import fixedpoint as fx
from rioflow.errors import RioflowError
from rioflow.ir import Diagram, Endpoint, Node, Port, Wire, topo_order, validate
from rioflow.primitives import fire
from rioflow.types import BOOL, F64, I32, Value, array, cluster, coerce, fxp


def gate(nid, n_in=1):
    return Node(nid, "Not" if n_in == 1 else "And", tuple(Port(p) for p in ("x", "y")[:n_in]), (Port("out"),))


def const(nid):
    return Node(nid, "Const", (), (Port("out"),), attrs={"value": True})


def w(a, b):
    return Wire(Endpoint(a, "out"), (Endpoint(b, "x"),))


# ------------------------------------------------------------------ validate

def test_validate_empty():
    assert validate(Diagram()) == []


def test_validate_multi_driver():
    d = Diagram((const("a"), const("b"), gate("c")), (w("a", "c"), w("b", "c")))
    assert [x.code for x in validate(d)] == ["E_MULTI_DRIVER"]


def _dfs_has_cycle(edges, nodes):
    color = dict.fromkeys(nodes, 0)

    def visit(u):
        color[u] = 1
        for a, b in edges:
            if a == u:
                if color[b] == 1 or (color[b] == 0 and visit(b)):
                    return True
        color[u] = 2
        return False

    return any(color[u] == 0 and visit(u) for u in nodes)


def test_validate_two_node_cycle():
    d = Diagram((gate("a"), gate("b")), (w("a", "b"), w("b", "a")))
    assert _dfs_has_cycle([("a", "b"), ("b", "a")], ["a", "b"])
    assert "E_CYCLE" in [x.code for x in validate(d)]


def test_validate_reports_dangling_input():
    d = Diagram((gate("a"),), ())
    assert [x.code for x in validate(d)] == ["E_UNDRIVEN"]


# ---------------------------------------------------------------- topo_order

def test_topo_chain():
    d = Diagram((const("a"), gate("b"), gate("c")), (w("a", "b"), w("b", "c")))
    assert [n.id for n in topo_order(d)] == ["a", "b", "c"]


def test_topo_empty():
    assert topo_order(Diagram()) == []


def _all_orders(ids, edges):
    for perm in itertools.permutations(ids):
        pos = {n: i for i, n in enumerate(perm)}
        if all(pos[a] < pos[b] for a, b in edges):
            yield list(perm)


def test_topo_diamond_is_smallest_order():
    d = Diagram((const("a"), gate("b"), gate("c"), gate("d", 2)),
                (w("a", "b"), w("a", "c"), Wire(Endpoint("b", "out"), (Endpoint("d", "x"),)),
                 Wire(Endpoint("c", "out"), (Endpoint("d", "y"),))))
    edges = [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
    assert [n.id for n in topo_order(d)] == min(_all_orders("abcd", edges)) == ["a", "b", "c", "d"]


@st.composite
def dags(draw, max_nodes=7):
    n = draw(st.integers(1, max_nodes))
    ids = draw(st.permutations([f"n{i}" for i in range(n)]))
    nodes, wires, edges = [], [], []
    for k, nid in enumerate(ids):
        preds = draw(st.lists(st.sampled_from(ids[:k]), max_size=2, unique=True)) if k else []
        if not preds:
            nodes.append(const(nid))
            continue
        nodes.append(gate(nid, len(preds)))
        for p, port in zip(preds, ("x", "y")):
            wires.append(Wire(Endpoint(p, "out"), (Endpoint(nid, port),)))
            edges.append((p, nid))
    return Diagram(tuple(nodes), tuple(wires)), edges


@given(dags())
def test_topo_matches_brute_force(case):
    d, edges = case
    ids = sorted(n.id for n in d.nodes)
    order = [n.id for n in topo_order(d)]
    assert sorted(order) == ids
    assert order == min(_all_orders(ids, edges))


@given(dags())
def test_validate_idempotent(case):
    d, _ = case
    assert validate(d) == validate(d) == []


# ------------------------------------------------------------- wire values

def test_value_checks_payload():
    assert Value(I32, 3).payload == 3
    with pytest.raises(TypeError):
        Value(I32, 3.0)
    with pytest.raises(TypeError):
        Value(array(I32, 2), (1,))
    assert Value.of(cluster(I32, F64), (1, 2)).payload == (1, 2.0)


def test_i32_literals_wrap():
    assert coerce(I32, 2**31) == -(2**31)


def test_fxp_add_saturates():
    # exact sum is 8.0, one past the top of fxp<8,4>
    t = fxp(8, 4)
    out = fire("Add", [Value.of(t, 7.9375), Value.of(t, 0.0625)])[0]
    assert out.type == t
    assert out.payload == 2**7 - 1
    assert out.to_python() == 7.9375


def test_fxp_mul_is_exact():
    t = fxp(8, 4)
    a, b = Value.of(t, -7.5), Value.of(t, 3.1875)
    out = fire("Mul", [a, b])[0]
    assert out.type == fxp(16, 8)
    assert out.payload == a.payload * b.payload
    assert out.to_python() == -7.5 * 3.1875


def test_select_and_i32_overflow():
    assert fire("Select", [Value(BOOL, True), Value(I32, 7), Value(I32, 9)])[0].payload == 7
    assert fire("Add", [Value(I32, 2**31 - 1), Value(I32, 1)])[0].payload == -(2**31)


def test_i32_div_by_zero():
    with pytest.raises(RioflowError) as e:
        fire("Div", [Value(I32, 1), Value(I32, 0)])
    assert e.value.code == "E_RUNTIME" and e.value.details["cause"] == "div_by_zero"


# -------------------------------------------------------------- fixed point

@given(st.integers(-(2**40), 2**40), st.integers(2, 32))
def test_saturate_and_wrap_land_in_range(raw, bits):
    lo, hi = fx.int_range(bits)
    s, r = fx.saturate(raw, bits), fx.wrap(raw, bits)
    assert lo <= s <= hi and lo <= r <= hi
    assert (r - raw) % (1 << bits) == 0
    assert s == min(max(raw, lo), hi)


@given(st.integers(2, 24), st.data())
def test_fxp_float_round_trip(word, data):
    integer = data.draw(st.integers(-4, word + 4))
    lo, hi = fx.int_range(word)
    raw = data.draw(st.integers(lo, hi))
    assert fx.from_float(fx.to_float(raw, word, integer), word, integer) == raw


@given(st.integers(-(2**20), 2**20), st.integers(0, 12))
def test_shift_round_is_half_even(raw, shift):
    from fractions import Fraction

    assert fx.shift_round(raw, shift) == round(Fraction(raw, 1 << shift))
