"""Wire types and immutable values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from . import fixedpoint as fx

BOOLEAN = "boolean"
INT32 = "int32"
FLOAT64 = "float64"
FIXED = "fixedpoint"
ARRAY = "array"
CLUSTER = "cluster"
KINDS = (BOOLEAN, INT32, FLOAT64, FIXED, ARRAY, CLUSTER)


@dataclass(frozen=True)
class WireType:
    kind: str
    word_bits: int = 0
    integer_bits: int = 0
    elem: WireType | None = None
    length: int = 0
    fields: tuple[WireType, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown wire kind {self.kind!r}")
        if self.kind == FIXED:
            if not 0 < self.word_bits <= 64:
                raise ValueError(f"fixedpoint word length {self.word_bits} outside 1..64")
            if self.integer_bits > self.word_bits:
                raise ValueError("fixedpoint integer length exceeds word length")
        if self.kind == ARRAY:
            if self.elem is None or self.length < 0:
                raise ValueError("array needs an element type and a length >= 0")

    @property
    def frac_bits(self) -> int:
        return self.word_bits - self.integer_bits

    @property
    def is_scalar(self) -> bool:
        return self.kind in (BOOLEAN, INT32, FLOAT64, FIXED)

    @property
    def is_numeric(self) -> bool:
        return self.kind in (INT32, FLOAT64, FIXED)

    @property
    def scalar(self) -> WireType:
        """Element type for arrays, the type itself otherwise."""
        return self.elem if self.kind == ARRAY else self

    @property
    def bits(self) -> int:
        if self.kind == BOOLEAN:
            return 1
        if self.kind == INT32:
            return 32
        if self.kind == FLOAT64:
            return 64
        if self.kind == FIXED:
            return self.word_bits
        if self.kind == ARRAY:
            return self.length * self.elem.bits
        return sum(f.bits for f in self.fields)

    def __str__(self):
        if self.kind == BOOLEAN:
            return "bool"
        if self.kind == INT32:
            return "i32"
        if self.kind == FLOAT64:
            return "f64"
        if self.kind == FIXED:
            return f"fxp<{self.word_bits},{self.integer_bits}>"
        if self.kind == ARRAY:
            return f"[{self.elem};{self.length}]"
        return "cluster<" + ",".join(str(f) for f in self.fields) + ">"


BOOL = WireType(BOOLEAN)
I32 = WireType(INT32)
F64 = WireType(FLOAT64)


def fxp(word_bits: int, integer_bits: int) -> WireType:
    return WireType(FIXED, word_bits=word_bits, integer_bits=integer_bits)


def array(elem: WireType, length: int) -> WireType:
    return WireType(ARRAY, elem=elem, length=length)


def cluster(*fields: WireType) -> WireType:
    return WireType(CLUSTER, fields=tuple(fields))


def payload_ok(t: WireType, p: Any) -> bool:
    k = t.kind
    if k == BOOLEAN:
        return isinstance(p, bool)
    if k == INT32:
        return type(p) is int and -(1 << 31) <= p < (1 << 31)
    if k == FLOAT64:
        return type(p) is float
    if k == FIXED:
        lo, hi = fx.int_range(t.word_bits)
        return type(p) is int and lo <= p <= hi
    if k == ARRAY:
        return isinstance(p, tuple) and len(p) == t.length and all(payload_ok(t.elem, e) for e in p)
    return (isinstance(p, tuple) and len(p) == len(t.fields)
            and all(payload_ok(f, e) for f, e in zip(t.fields, p)))


def default_payload(t: WireType) -> Any:
    k = t.kind
    if k == BOOLEAN:
        return False
    if k == FLOAT64:
        return 0.0
    if k in (INT32, FIXED):
        return 0
    if k == ARRAY:
        return (default_payload(t.elem),) * t.length
    return tuple(default_payload(f) for f in t.fields)


def coerce(t: WireType, x: Any, mode: str = fx.SATURATE) -> Any:
    """Turn a plain Python literal into a payload of type ``t``.

    Real numbers given for fixedpoint are quantized (round half even) and fit
    with ``mode``; i32 literals wrap.
    """
    k = t.kind
    if k == BOOLEAN:
        if isinstance(x, (bool, int)) and x in (0, 1):
            return bool(x)
        raise ValueError(f"{x!r} is not a boolean")
    if k == INT32:
        if isinstance(x, float) and not x.is_integer():
            raise ValueError(f"{x!r} is not an integer")
        return fx.wrap32(int(x))
    if k == FLOAT64:
        return float(x)
    if k == FIXED:
        return fx.from_float(float(x), t.word_bits, t.integer_bits, mode)
    items = list(x)
    if k == ARRAY:
        if len(items) != t.length:
            raise ValueError(f"expected {t.length} elements, got {len(items)}")
        return tuple(coerce(t.elem, e, mode) for e in items)
    if len(items) != len(t.fields):
        raise ValueError("cluster arity mismatch")
    return tuple(coerce(f, e, mode) for f, e in zip(t.fields, items))


def to_python(t: WireType, p: Any) -> Any:
    """Inverse of :func:`coerce` for display: fixedpoint becomes float."""
    k = t.kind
    if k == FIXED:
        return fx.to_float(p, t.word_bits, t.integer_bits)
    if k == ARRAY:
        return [to_python(t.elem, e) for e in p]
    if k == CLUSTER:
        return [to_python(f, e) for f, e in zip(t.fields, p)]
    return p


@dataclass(frozen=True)
class Value:
    """A payload paired with its wire type; construction checks the match."""

    type: WireType
    payload: Any

    def __post_init__(self):
        if not payload_ok(self.type, self.payload):
            raise TypeError(f"payload {self.payload!r} does not match {self.type}")

    @classmethod
    def of(cls, t: WireType, x: Any, mode: str = fx.SATURATE) -> Value:
        return cls(t, coerce(t, x, mode))

    def to_python(self):
        return to_python(self.type, self.payload)
