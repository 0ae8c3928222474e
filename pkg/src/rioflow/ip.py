"""Imported IP: descriptors, schema validation and behaviour models.

Two styles exist. An IPIN block is a node inside a diagram: it fires under
dataflow semantics on the host and becomes a pipelined primitive with fixed
latency on the fabric. A CLIP block is free-running: it advances on every
tick of its own clock, independent of any timed loop, and talks to the rest
of the design through pins and channels.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import jsonschema

from . import fixedpoint as fx
from .errors import RioflowError
from .ir import Port
from .types import BOOL, BOOLEAN, INT32, WireType

CLIP, IPIN = "CLIP", "IPIN"

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}}
_VECTOR = {"type": "array", "items": {"type": "integer"}}

SCHEMA = {
    "type": "object",
    "required": ["name", "style", "ports", "behavior"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
        "style": {"enum": [CLIP, IPIN]},
        "ports": {"type": "array", "items": {
            "type": "object", "required": ["name", "type", "direction"],
            "properties": {"name": {"type": "string"}, "type": {"enum": ["bool", "i32"]},
                           "direction": {"enum": ["in", "out"]}},
        }},
        "behavior": {"oneOf": [
            {"type": "object", "required": ["kind"],
             "properties": {"kind": {"const": "linear"}, "A": _MATRIX, "B": _MATRIX,
                            "C": _MATRIX, "D": _MATRIX, "c": _VECTOR, "init": _VECTOR}},
            {"type": "object", "required": ["kind", "rows"],
             "properties": {"kind": {"const": "table"}, "init": _VECTOR, "rows": {
                 "type": "array", "items": {"type": "object", "required": ["state", "in", "next"],
                                            "properties": {"state": _VECTOR, "in": _VECTOR,
                                                           "next": _VECTOR}}}}},
        ]},
        "latency": {"type": "integer", "minimum": 0},
        "depth_ns": {"type": "number", "minimum": 0},
        "clock": {"type": "string"},
        "bindings": {"type": "object", "additionalProperties": {"type": "string"}},
        "resources": {"type": "object", "properties": {
            k: {"type": "integer", "minimum": 0} for k in ("lut", "ff", "dsp", "bram")}},
    },
}

_TYPES = {"bool": BOOL, "i32": WireType(INT32)}


@dataclass(frozen=True)
class IpDescriptor:
    name: str
    style: str
    inputs: tuple[Port, ...]
    outputs: tuple[Port, ...]
    behavior: dict
    latency: int = 0
    depth_ns: float | None = None
    clock: str | None = None
    bindings: dict = field(default_factory=dict)
    resources: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> IpDescriptor:
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as e:
            raise RioflowError("E_IP_SCHEMA", e.message, ref=str(d.get("name", ""))) from None
        ins = tuple(Port(p["name"], _TYPES[p["type"]]) for p in d["ports"] if p["direction"] == "in")
        outs = tuple(Port(p["name"], _TYPES[p["type"]]) for p in d["ports"] if p["direction"] == "out")
        desc = cls(d["name"], d["style"], ins, outs, dict(d["behavior"]), int(d.get("latency", 0)),
                   d.get("depth_ns"), d.get("clock"), dict(d.get("bindings", {})),
                   dict(d.get("resources", {})))
        desc._check()
        return desc

    @classmethod
    def load(cls, path) -> IpDescriptor:
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def _check(self):
        def bad(msg):
            raise RioflowError("E_IP_SCHEMA", msg, ref=self.name)

        names = [p.name for p in self.inputs + self.outputs]
        if len(names) != len(set(names)):
            bad("duplicate port names")
        if self.style == CLIP and not self.clock:
            raise RioflowError("E_IP_CLOCK_UNDECLARED", "CLIP blocks must declare a clock", ref=self.name)
        if self.style == IPIN and self.latency == 0 and self.depth_ns is None:
            bad("a latency-0 IPIN needs depth_ns")
        b = self.behavior
        n_in, n_out = len(self.inputs), len(self.outputs)
        if b["kind"] == "linear":
            n = len(b.get("A", []))
            if any(len(r) != n for r in b.get("A", [])):
                bad("A must be square")
            if len(b.get("B", [[0] * n_in] * n)) != n or any(len(r) != n_in for r in b.get("B", [])):
                bad("B must be states x inputs")
            if "C" not in b and n != n_out:
                bad("without C the state size must equal the output count")
            if any(len(r) != n for r in b.get("C", [])) or len(b.get("C", [[0] * n] * n_out)) != n_out:
                bad("C must be outputs x states")
            if any(len(r) != n_in for r in b.get("D", [])) or len(b.get("D", [[0] * n_in] * n_out)) != n_out:
                bad("D must be outputs x inputs")
            if len(b.get("c", [0] * n)) != n or len(b.get("init", [0] * n)) != n:
                bad("c and init must have one entry per state")
        else:
            n = len(b.get("init", [0] * n_out))
            if n != n_out:
                bad("table state size must equal the output count")
            for r in b["rows"]:
                if len(r["state"]) != n or len(r["next"]) != n or len(r["in"]) != n_in:
                    bad("table row arity mismatch")


def _fit(t: WireType, x: int):
    return bool(x) if t.kind == BOOLEAN else fx.wrap32(x)


class Behavior:
    """Integer state machine ``state' = A s + B u + c``, ``y = C s + D u``."""

    def __init__(self, desc: IpDescriptor):
        self.desc = desc
        b = desc.behavior
        self.kind = b["kind"]
        self.n_in = len(desc.inputs)
        if self.kind == "linear":
            n = len(b.get("A", []))
            self.A = b.get("A", [])
            self.B = b.get("B", [[0] * self.n_in for _ in range(n)])
            self.c = b.get("c", [0] * n)
            self.C = b.get("C", [[int(i == j) for j in range(n)] for i in range(n)])
            self.D = b.get("D", [[0] * self.n_in for _ in range(len(desc.outputs))])
            self.init = tuple(b.get("init", [0] * n))
        else:
            self.table = {(tuple(r["state"]), tuple(r["in"])): tuple(r["next"]) for r in b["rows"]}
            self.init = tuple(b.get("init", [0] * len(desc.outputs)))

    def output(self, state, ins):
        u = [int(x) for x in ins]
        if self.kind == "table":
            y = state
        else:
            y = [sum(ci * s for ci, s in zip(row, state)) + sum(di * x for di, x in zip(drow, u))
                 for row, drow in zip(self.C, self.D)]
        return tuple(_fit(p.type, v) for p, v in zip(self.desc.outputs, y))

    def next_state(self, state, ins):
        u = tuple(int(x) for x in ins)
        if self.kind == "table":
            return self.table.get((tuple(state), u), tuple(state))
        return tuple(fx.wrap32(sum(a * s for a, s in zip(row, state)) + sum(b * x for b, x in zip(brow, u)) + c)
                     for row, brow, c in zip(self.A, self.B, self.c))


class IpPrimitive:
    """An IPIN block usable as a diagram node (``node x: Ip(name=...)``)."""

    def __init__(self, desc: IpDescriptor):
        self.desc = desc
        self.name = desc.name
        self.inputs, self.outputs = desc.inputs, desc.outputs
        self.latency = desc.latency
        self.depth_ns = desc.depth_ns if desc.depth_ns is not None else 0.0
        self.behavior = Behavior(desc)

    def host_kernel(self):
        """Dataflow form: each firing computes outputs then updates state."""
        beh = self.behavior
        state = [beh.init]

        def k(*ins):
            y = beh.output(state[0], ins)
            state[0] = beh.next_state(state[0], ins)
            return y

        return k

    def fabric_unit(self):
        return _PipelinedIp(self)


class _PipelinedIp:
    """Fabric form: accepts one input per tick, result visible ``latency`` ticks later."""

    def __init__(self, ip: IpPrimitive):
        self.beh = ip.behavior
        self.latency = ip.latency
        zero = tuple(_fit(p.type, 0) for p in ip.outputs)
        self.state = self.beh.init
        self.pipe = deque([zero] * ip.latency)
        self.pending = None

    def eval(self, *ins):
        y = self.beh.output(self.state, ins)
        self.pending = (y, self.beh.next_state(self.state, ins))
        if self.latency == 0:
            return y
        return self.pipe[0]

    def latch(self):
        y, self.state = self.pending
        if self.latency:
            self.pipe.popleft()
            self.pipe.append(y)


class ClipBlock:
    """Free-running CLIP instance; ``tick`` advances one cycle of its clock."""

    def __init__(self, desc: IpDescriptor, clock_hz: int):
        self.desc = desc
        self.name = desc.name
        self.clock = desc.clock
        self.hz = int(clock_hz)
        self.behavior = Behavior(desc)
        self.state = self.behavior.init
        self.pins: dict[str, object] = {p.name: _fit(p.type, 0) for p in desc.inputs + desc.outputs}
        self.ticks = 0

    def tick(self, inputs: dict | None = None):
        ins = tuple((inputs or {}).get(p.name, self.pins[p.name]) for p in self.desc.inputs)
        for p, v in zip(self.desc.inputs, ins):
            self.pins[p.name] = v
        self.state = self.behavior.next_state(self.state, ins)
        for p, v in zip(self.desc.outputs, self.behavior.output(self.state, ins)):
            self.pins[p.name] = v
        self.ticks += 1


def import_ip(desc: IpDescriptor | dict, clocks: dict | None = None):
    """Turn a descriptor into an IPIN primitive or a CLIP block."""
    if isinstance(desc, dict):
        desc = IpDescriptor.from_dict(desc)
    if desc.style == IPIN:
        return IpPrimitive(desc)
    clocks = clocks or {}
    if desc.clock not in clocks:
        raise RioflowError("E_IP_CLOCK_UNDECLARED", f"clock {desc.clock!r} is not declared", ref=desc.name)
    return ClipBlock(desc, clocks[desc.clock])
