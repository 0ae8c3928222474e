"""Builtin primitives: port signatures, typing rules and pure kernels.

Kernels work on raw payloads (see :mod:`rioflow.types`) for a node whose
ports are already typed. Channel, scan, file and IP primitives have
target-specific behaviour and are bound by the host runtime or the fabric
compiler; this module only types them.
"""

from __future__ import annotations

import math

import numpy as np

from . import fixedpoint as fx
from .errors import RioflowError
from .types import (ARRAY, BOOL, BOOLEAN, F64, FIXED, FLOAT64, I32, INT32, WireType, array, coerce,
                    default_payload, fxp)

ARITH = ("Add", "Sub", "Mul", "Div")
COMPARE = ("Gt", "Lt", "Eq")
LOGIC = ("And", "Or", "Not")
CHANNEL_OPS = ("FifoRead", "FifoWrite", "RegRead", "RegWrite")
SCAN_OPS = ("ScanRead", "ScanWrite")
PRIMITIVES = frozenset(ARITH + COMPARE + LOGIC + CHANNEL_OPS + SCAN_OPS + (
    "Select", "Const", "Convert", "Biquad", "ArrayIndex", "ArrayBuild", "FileReadPCM", "Ip"))

_OUT_NAME = {"Add": "sum", "Sub": "diff", "Mul": "prod", "Div": "quot"}


def port_names(op: str, attrs: dict, ip=None) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(input names, output names) of a primitive given its attributes."""
    if op in ARITH:
        return ("x", "y"), (_OUT_NAME[op],)
    if op in COMPARE or op in ("And", "Or"):
        return ("x", "y"), ("out",)
    if op == "Not":
        return ("x",), ("out",)
    if op == "Select":
        return ("s", "t", "f"), ("out",)
    if op == "Const":
        return (), ("out",)
    if op == "Convert":
        return ("x",), ("out",)
    if op == "Biquad":
        return ("x",), ("y",)
    if op == "ArrayIndex":
        return ("array", "index"), ("elem",)
    if op == "ArrayBuild":
        return tuple(f"x{i}" for i in range(int(attrs.get("n", 0)))), ("array",)
    if op == "FileReadPCM":
        return (), ("samples",)
    if op == "FifoRead":
        return (("en",) if attrs.get("gated") else ()), ("value", "ok")
    if op == "FifoWrite":
        return ("value",) + (("en",) if attrs.get("gated") else ()), ("ok",)
    if op in ("RegRead", "ScanRead"):
        return (), ("value",)
    if op in ("RegWrite", "ScanWrite"):
        return ("value",), ()
    if op == "Ip":
        if ip is None:
            raise RioflowError("E_UNKNOWN_IP", f"no imported IP named {attrs.get('name')!r}")
        return tuple(p.name for p in ip.inputs), tuple(p.name for p in ip.outputs)
    raise RioflowError("E_UNKNOWN_PRIMITIVE", f"unknown primitive {op!r}")


# -------------------------------------------------------------------- typing


def _mismatch(ref, found, expected):
    raise RioflowError("E_TYPE_MISMATCH", f"found {found}, expected {expected}", ref=ref,
                       details={"found": str(found), "expected": str(expected)})


def _reshape(t: WireType, scalar: WireType) -> WireType:
    return array(scalar, t.length) if t.kind == ARRAY else scalar


def promotable(src: WireType, dst: WireType) -> bool:
    """True if ``src`` reaches ``dst`` exactly or by i32 -> f64/fxp promotion."""
    if src == dst:
        return True
    if src.kind == ARRAY and dst.kind == ARRAY:
        return src.length == dst.length and promotable(src.elem, dst.elem)
    return src.kind == INT32 and dst.kind in (FLOAT64, FIXED)


def _shape_join(ref, a: WireType, b: WireType):
    if a.kind == ARRAY and b.kind == ARRAY and a.length != b.length:
        _mismatch(ref, b, a)
    return a if a.kind == ARRAY else b if b.kind == ARRAY else None


def _unify_numeric(ref, a: WireType, b: WireType):
    """Promote the scalar kinds of two operands; returns (sa', sb')."""
    sa, sb = a.scalar, b.scalar
    if not (sa.is_scalar and sb.is_scalar):
        _mismatch(ref, b, a)
    if sa.kind == sb.kind:
        return sa, sb
    kinds = {sa.kind, sb.kind}
    if kinds == {INT32, FLOAT64}:
        return F64, F64
    if kinds == {INT32, FIXED}:
        f = sa if sa.kind == FIXED else sb
        wide = fxp(32, 32)
        return (f, wide) if sa.kind == FIXED else (wide, f)
    _mismatch(ref, b, a)


def infer(op: str, attrs: dict, ins: dict[str, WireType], ref: str = "", ip=None, channel=None):
    """Typing rule of a primitive.

    Returns ``(required_inputs, outputs)``: the types each input must have
    (a caller inserts Convert nodes where the found type differs) and the
    output port types.
    """
    if op in ARITH or op in COMPARE:
        a, b = ins["x"], ins["y"]
        shape = _shape_join(ref, a, b)
        if op == "Eq" and a.scalar == BOOL and b.scalar == BOOL:
            sa = sb = BOOL
        else:
            if a.scalar.kind == BOOLEAN or b.scalar.kind == BOOLEAN:
                _mismatch(ref, b if a.scalar.kind != BOOLEAN else a, "numeric")
            sa, sb = _unify_numeric(ref, a, b)
        req = {"x": _reshape(a, sa), "y": _reshape(b, sb)}
        if op in COMPARE:
            so = BOOL
        elif sa.kind == FIXED:
            fa, fb = (sa.word_bits, sa.integer_bits), (sb.word_bits, sb.integer_bits)
            if op == "Div":
                _mismatch(ref, sa, "i32 or f64 for Div")
            so = fxp(*(fx.mul_format(fa, fb) if op == "Mul" else fx.add_format(fa, fb)))
        else:
            so = sa
        out = _reshape(shape, so) if shape is not None else so
        return req, {port_names(op, attrs)[1][0]: out}
    if op in ("And", "Or", "Not"):
        names = ("x",) if op == "Not" else ("x", "y")
        ts = [ins[n] for n in names]
        s = ts[0].scalar
        if s.kind not in (BOOLEAN, INT32) or any(t.scalar != s for t in ts):
            _mismatch(ref, ts[-1], "bool or i32 operands of one kind")
        shape = ts[0] if len(ts) == 1 else _shape_join(ref, ts[0], ts[1])
        return dict(zip(names, ts)), {"out": _reshape(shape, s) if shape is not None else s}
    if op == "Select":
        s, t, f = ins["s"], ins["t"], ins["f"]
        if s != BOOL:
            _mismatch(ref, s, BOOL)
        if t == f:
            return {"s": BOOL, "t": t, "f": f}, {"out": t}
        if promotable(t, f):
            return {"s": BOOL, "t": f, "f": f}, {"out": f}
        if promotable(f, t):
            return {"s": BOOL, "t": t, "f": t}, {"out": t}
        _mismatch(ref, f, t)
    if op == "Const":
        return {}, {"out": const_type(attrs)}
    if op == "Convert":
        x, to = ins["x"], attrs["to"]
        if to.kind == ARRAY:
            if x.kind != ARRAY or x.length != to.length:
                _mismatch(ref, x, to)
            src, dst = x.elem, to.elem
        else:
            if x.kind == ARRAY:
                _mismatch(ref, x, to)
            src, dst = x, to
        if not (src.is_scalar and dst.is_scalar) or dst.kind == BOOLEAN:
            _mismatch(ref, x, to)
        if attrs.get("mode", fx.SATURATE) not in fx.MODES:
            raise RioflowError("E_ATTR", f"unknown overflow mode {attrs.get('mode')!r}", ref=ref)
        return {"x": x}, {"out": to}
    if op == "Biquad":
        x = ins["x"]
        if not (x.kind == ARRAY and promotable(x.elem, F64)):
            _mismatch(ref, x, "[f64;n]")
        t = array(F64, x.length)
        return {"x": t}, {"y": t}
    if op == "ArrayIndex":
        a, i = ins["array"], ins["index"]
        if a.kind != ARRAY:
            _mismatch(ref, a, "array")
        if i != I32:
            _mismatch(ref, i, I32)
        return {"array": a, "index": I32}, {"elem": a.elem}
    if op == "ArrayBuild":
        names = port_names(op, attrs)[0]
        ts = [ins[n] for n in names]
        if not ts:
            elem = attrs.get("type")
            if elem is None:
                raise RioflowError("E_ATTR", "empty ArrayBuild needs a type attribute", ref=ref)
            return {}, {"array": array(elem, 0)}
        if any(t != ts[0] for t in ts):
            _mismatch(ref, next(t for t in ts if t != ts[0]), ts[0])
        return dict(zip(names, ts)), {"array": array(ts[0], len(ts))}
    if op == "FileReadPCM":
        return {}, {"samples": array(F64, int(attrs.get("length", 0)))}
    if op in CHANNEL_OPS:
        if channel is None:
            raise RioflowError("E_UNKNOWN_CHANNEL", f"no channel named {attrs.get('channel')!r}", ref=ref)
        elem = channel
        if op == "FifoRead":
            return ({"en": BOOL} if attrs.get("gated") else {}), {"value": elem, "ok": BOOL}
        if op == "FifoWrite":
            v = ins["value"]
            # host writes of a whole array enqueue it element by element
            want = array(elem, v.length) if v.kind == ARRAY and elem.kind != ARRAY else elem
            if not promotable(v, want):
                _mismatch(ref, v, elem)
            req = {"value": want}
            if attrs.get("gated"):
                req["en"] = BOOL
            return req, {"ok": BOOL}
        if op == "RegRead":
            return {}, {"value": elem}
        if not promotable(ins["value"], elem):
            _mismatch(ref, ins["value"], elem)
        return {"value": elem}, {}
    if op == "ScanRead":
        return {}, {"value": F64}
    if op == "ScanWrite":
        if not promotable(ins["value"], F64):
            _mismatch(ref, ins["value"], F64)
        return {"value": F64}, {}
    if op == "Ip":
        for p in ip.inputs:
            if not promotable(ins[p.name], p.type):
                _mismatch(f"{ref}.{p.name}", ins[p.name], p.type)
        return {p.name: p.type for p in ip.inputs}, {p.name: p.type for p in ip.outputs}
    raise RioflowError("E_UNKNOWN_PRIMITIVE", f"unknown primitive {op!r}", ref=ref)


def const_type(attrs) -> WireType:
    t = attrs.get("type")
    if t is not None:
        return t
    v = attrs.get("value")
    if isinstance(v, bool):
        return BOOL
    if isinstance(v, int):
        return I32
    if isinstance(v, float):
        return F64
    raise RioflowError("E_ATTR", "Const needs a type attribute for this value")


def const_payload(attrs):
    return coerce(const_type(attrs), attrs.get("value", 0))


# ------------------------------------------------------------------- kernels


def _elementwise(f, types: list[WireType]):
    """Lift a scalar kernel over array operands (scalars broadcast)."""
    arr = [t.kind == ARRAY for t in types]
    if not any(arr):
        return f

    def lifted(*xs):
        n = next(len(x) for x, a in zip(xs, arr) if a)
        cols = [x if a else (x,) * n for x, a in zip(xs, arr)]
        return tuple(f(*row) for row in zip(*cols))

    return lifted


def _fdiv(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or a != a:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _idiv(a: int, b: int) -> int:
    if b == 0:
        raise RioflowError("E_RUNTIME", "division by zero", details={"cause": "div_by_zero"})
    q = abs(a) // abs(b)
    return fx.wrap32(q if (a < 0) == (b < 0) else -q)


def scalar_arith(op: str, ta: WireType, tb: WireType, to: WireType):
    k = ta.kind
    if k == INT32:
        return {"Add": lambda a, b: fx.wrap32(a + b),
                "Sub": lambda a, b: fx.wrap32(a - b),
                "Mul": lambda a, b: fx.wrap32(a * b),
                "Div": _idiv}[op]
    if k == FLOAT64:
        return {"Add": lambda a, b: a + b, "Sub": lambda a, b: a - b,
                "Mul": lambda a, b: a * b, "Div": _fdiv}[op]
    fa, fb, fo, wo = ta.frac_bits, tb.frac_bits, to.frac_bits, to.word_bits
    if op == "Mul":
        shift = fa + fb - fo
        return lambda a, b: fx.saturate(fx.shift_round(a * b, shift), wo)
    sa, sb = fo - fa, fo - fb
    if sa >= 0 and sb >= 0:
        if op == "Add":
            return lambda a, b: fx.saturate((a << sa) + (b << sb), wo)
        return lambda a, b: fx.saturate((a << sa) - (b << sb), wo)
    # output capped at 64 bits: compute at full precision, then round
    full = max(fa, fb)
    da, db, sh = full - fa, full - fb, full - fo
    if op == "Add":
        return lambda a, b: fx.saturate(fx.shift_round((a << da) + (b << db), sh), wo)
    return lambda a, b: fx.saturate(fx.shift_round((a << da) - (b << db), sh), wo)


def scalar_compare(op: str, ta: WireType, tb: WireType):
    if ta.kind == FIXED:
        full = max(ta.frac_bits, tb.frac_bits)
        da, db = full - ta.frac_bits, full - tb.frac_bits
        cmp = {"Gt": lambda a, b: (a << da) > (b << db), "Lt": lambda a, b: (a << da) < (b << db),
               "Eq": lambda a, b: (a << da) == (b << db)}
        return cmp[op]
    return {"Gt": lambda a, b: a > b, "Lt": lambda a, b: a < b, "Eq": lambda a, b: a == b}[op]


def scalar_convert(src: WireType, dst: WireType, mode: str = fx.SATURATE):
    if src == dst:
        return lambda x: x
    s, d = src.kind, dst.kind
    if d == FLOAT64:
        if s == FIXED:
            scale = 2.0 ** -src.frac_bits
            return lambda x: x * scale
        return lambda x: float(x)
    if d == INT32:
        if s == FLOAT64:
            return lambda x: fx.fit(fx.from_float(x, 64, 64, fx.SATURATE), 32, mode)
        if s == FIXED:
            f = src.frac_bits
            return lambda x: fx.fit(fx.shift_round(x, f), 32, mode)
        return lambda x: int(x)
    # fixedpoint destination
    w, i, f = dst.word_bits, dst.integer_bits, dst.frac_bits
    if s == FLOAT64:
        return lambda x: fx.from_float(x, w, i, mode)
    if s == FIXED:
        sh = src.frac_bits - f
        return lambda x: fx.fit(fx.shift_round(x, sh), w, mode)
    return lambda x: fx.fit(int(x) << f if f >= 0 else fx.shift_round(int(x), -f), w, mode)


def biquad(x, b0, b1, b2, a1, a2, state=(0.0, 0.0)):
    """Direct-form-II-transposed biquad section.

    Returns ``(y, (s1, s2))`` so blocks can be chained with carried state.
    """
    s1, s2 = state
    y = np.empty(len(x), dtype=np.float64)
    for n, xn in enumerate(x):
        xn = float(xn)
        yn = b0 * xn + s1
        s1 = b1 * xn - a1 * yn + s2
        s2 = b2 * xn - a2 * yn
        y[n] = yn
    return y, (s1, s2)


def pure_kernel(node):
    """Kernel ``f(*inputs) -> tuple(outputs)`` for a typed pure primitive node.

    Returns None for primitives whose behaviour is target-specific.
    """
    op, attrs = node.op, node.attrs
    tin = [p.type for p in node.in_ports]
    tout = [p.type for p in node.out_ports]
    if op in ARITH:
        f = _elementwise(scalar_arith(op, tin[0].scalar, tin[1].scalar, tout[0].scalar), tin)
        return lambda a, b: (f(a, b),)
    if op in COMPARE:
        f = _elementwise(scalar_compare(op, tin[0].scalar, tin[1].scalar), tin)
        return lambda a, b: (f(a, b),)
    if op in ("And", "Or", "Not"):
        s = tin[0].scalar
        if s.kind == BOOLEAN:
            g = {"And": lambda a, b: a and b, "Or": lambda a, b: a or b, "Not": lambda a: not a}[op]
        else:
            g = {"And": lambda a, b: a & b, "Or": lambda a, b: a | b, "Not": lambda a: fx.wrap32(~a)}[op]
        f = _elementwise(g, tin)
        return lambda *xs: (f(*xs),)
    if op == "Select":
        return lambda s, t, f: (t if s else f,)
    if op == "Const":
        v = const_payload(attrs)
        return lambda: (v,)
    if op == "Convert":
        g = scalar_convert(tin[0].scalar, tout[0].scalar, attrs.get("mode", fx.SATURATE))
        f = _elementwise(g, tin)
        return lambda x: (f(x),)
    if op == "Biquad":
        c = [float(attrs.get(k, 0.0)) for k in ("b0", "b1", "b2", "a1", "a2")]
        return lambda x: (tuple(biquad(x, *c)[0].tolist()),)
    if op == "ArrayIndex":
        dflt = default_payload(tin[0].elem)
        return lambda a, i: (a[i] if 0 <= i < len(a) else dflt,)
    if op == "ArrayBuild":
        return lambda *xs: (tuple(xs),)
    return None


def fire(prim: str, ins, **attrs):
    """Apply a pure primitive to :class:`~rioflow.types.Value` inputs.

    Input types are taken from the values; promotions are applied as a
    diagram would (an implicit Convert per promoted input).
    """
    from .ir import Node, Port
    from .types import Value

    in_names, out_names = port_names(prim, attrs)
    found = {n: v.type for n, v in zip(in_names, ins)}
    if len(ins) != len(in_names):
        raise RioflowError("E_ARITY", f"{prim} takes {len(in_names)} inputs, got {len(ins)}")
    req, outs = infer(prim, attrs, found, ref=prim)
    payloads = []
    for n, v in zip(in_names, ins):
        p = v.payload
        if req[n] != v.type:
            p = _elementwise(scalar_convert(v.type.scalar, req[n].scalar), [v.type])(p)
        payloads.append(p)
    node = Node(prim, prim, tuple(Port(n, req[n]) for n in in_names),
                tuple(Port(n, outs[n]) for n in out_names), attrs=attrs)
    k = pure_kernel(node)
    if k is None:
        raise RioflowError("E_NOT_PURE", f"{prim} needs a runtime environment")
    return [Value(outs[n], r) for n, r in zip(out_names, k(*payloads))]
