"""Timed loops compiled to clocked netlists, cycle-accurate simulation and estimates.

A netlist is the body of a single-cycle timed loop with every loop-carried
value, loop port and run-time parameter turned into a boundary register.
Each clock tick evaluates the combinational ops in topological order from
the register values, then latches the registers. There is no handshake: a
fabric FIFO op either transfers this tick or reports ``ok = False``.

The combinational logic is emitted as Python source. Scalar bool, i32 and
f64 operations are written out as expressions; everything else calls the
primitive kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import ir
from .elaborate import DEFAULT_CLOCK_HZ, DepthTable, TypeEnv, check_sctl, infer_types
from .errors import RioflowError
from .ip import IpPrimitive
from .primitives import pure_kernel
from .scanio import dac_emit
from .types import BOOLEAN, FLOAT64, INT32, default_payload

SHIFT, INPUT, OUTPUT, PARAM = "shift", "input", "output", "param"


@dataclass(frozen=True)
class Register:
    name: str
    kind: str
    type: object
    init: object


@dataclass(frozen=True)
class ChannelPort:
    node: str
    channel: str
    direction: str       # "read" | "write"
    capacity: int = 0
    elem: object = None


@dataclass(frozen=True)
class Netlist:
    name: str
    clock: str
    clock_hz: int
    ops: tuple[ir.Node, ...]
    registers: tuple[Register, ...]
    channel_ports: tuple[ChannelPort, ...]
    body: ir.Diagram = field(repr=False, default=None)
    pins: tuple[str, ...] = ()

    def register(self, name) -> Register:
        return next(r for r in self.registers if r.name == name)


# ------------------------------------------------------------------ compile


def compile_sctl(loop: ir.Node, table: DepthTable | None = None, clock_hz: int | None = None,
                 env: TypeEnv | None = None, check: bool = True) -> Netlist:
    """Compile a timed-loop node; raises if it is not single-cycle feasible.

    ``check=False`` skips the timing check (estimates of infeasible loops).
    """
    table = table or DepthTable()
    env = env or TypeEnv()
    s = loop.structure
    hz = int(clock_hz or DEFAULT_CLOCK_HZ)
    body = s.body
    if not all(p.type is not None for n in body.nodes for p in n.in_ports + n.out_ports):
        body = infer_types(body, env, loop.id + "/")
        s = ir.TimedLoop(body, s.clock, s.params, s.shift_registers)
        loop = ir.make_structure_node(loop.id, ir.SCTL, s, target_hint=loop.target_hint,
                                      attrs=loop.attrs, span=loop.span)
    report = check_sctl(loop, hz, table, env.ips)
    if check or any(e.code == "E_SCTL_ILLEGAL_NODE" for e in report.errors):
        report.raise_for_errors()
    shift = {r.name for r in s.shift_registers}
    regs = [Register(r.name, SHIFT, r.type, r.init if r.init is not None else default_payload(r.type))
            for r in s.shift_registers]
    for p in loop.in_ports:
        regs.append(Register(p.name, PARAM if p.name in s.params else INPUT, p.type, default_payload(p.type)))
    for p in loop.out_ports:
        if p.name not in shift:
            regs.append(Register(p.name, OUTPUT, p.type, default_payload(p.type)))
    ports = []
    for n in ir.topo_order(body):
        if n.op in ("FifoRead", "FifoWrite", "RegRead", "RegWrite"):
            decl = env.channels.get(n.attrs["channel"])
            ports.append(ChannelPort(n.id, n.attrs["channel"], "read" if n.op.endswith("Read") else "write",
                                     decl.capacity if decl else 0, decl.elem if decl else None))
    return Netlist(loop.id, s.clock, hz, tuple(ir.topo_order(body)), tuple(regs), tuple(ports), body)


def _w32(x):
    return ((x + 0x80000000) & 0xFFFFFFFF) - 0x80000000


_INFIX = {"Add": "+", "Sub": "-", "Mul": "*", "Gt": ">", "Lt": "<", "Eq": "=="}


def _inline_expr(n: ir.Node, args: list[str]) -> str | None:
    """Python expression for simple scalar ops, or None to call the kernel."""
    tin = [p.type for p in n.in_ports]
    tout = [p.type for p in n.out_ports]
    kinds = {t.kind for t in tin}
    op = n.op
    if op == "Const":
        v = n.attrs.get("value")
        t = tout[0]
        if t.kind == INT32 and isinstance(v, int) and not isinstance(v, bool):
            return repr(_w32(v))
        if t.kind == BOOLEAN and isinstance(v, bool):
            return repr(v)
        if t.kind == FLOAT64 and isinstance(v, (int, float)) and math.isfinite(v):
            return repr(float(v))
        return None
    if op == "Select" and tin[1] == tin[2]:
        return f"({args[1]} if {args[0]} else {args[2]})"
    if op in _INFIX and len(kinds) == 1:
        k = kinds.pop()
        if k == INT32:
            e = f"({args[0]} {_INFIX[op]} {args[1]})"
            return f"_w32{e}" if op in ("Add", "Sub", "Mul") else e
        if k == FLOAT64:
            return f"({args[0]} {_INFIX[op]} {args[1]})"
        if k == BOOLEAN and op == "Eq":
            return f"({args[0]} == {args[1]})"
        return None
    if op in ("And", "Or", "Not") and len(kinds) == 1:
        k = kinds.pop()
        if k == BOOLEAN:
            return {"And": f"({args[0]} and {args[-1]})", "Or": f"({args[0]} or {args[-1]})",
                    "Not": f"(not {args[0]})"}[op]
        if k == INT32:
            return {"And": f"({args[0]} & {args[-1]})", "Or": f"({args[0]} | {args[-1]})",
                    "Not": f"_w32(~{args[0]})"}[op]
    if op == "Convert" and tin[0].kind == INT32 and tout[0].kind == FLOAT64:
        return f"float({args[0]})"
    return None


def generate(nl: Netlist) -> tuple[str, list]:
    """Python source of ``_tick(R, K)`` and the list of node callables it uses.

    ``R`` holds register values; the function returns the body indicator
    values in declaration order.
    """
    reg_index = {r.name: i for i, r in enumerate(nl.registers)}
    var: dict[ir.Endpoint, str] = {}
    for c in nl.body.controls:
        var[ir.Endpoint("", c.name)] = f"R[{reg_index[c.name]}]"
    driver = {dst: w.src for w in nl.body.wires for dst in w.dsts}
    lines = ["def _tick(R, K):"]
    slots: list = []
    for k, n in enumerate(nl.ops):
        args = [var[driver[ir.Endpoint(n.id, p.name)]] for p in n.in_ports]
        outs = [f"v{k}_{j}" for j in range(len(n.out_ports))]
        for p, o in zip(n.out_ports, outs):
            var[ir.Endpoint(n.id, p.name)] = o
        expr = _inline_expr(n, args) if len(outs) == 1 else None
        if expr is not None:
            lines.append(f"    {outs[0]} = {expr}")
            continue
        slots.append(n)
        call = f"K[{len(slots) - 1}]({', '.join(args)})"
        if outs:
            lines.append(f"    {', '.join(outs)}, = {call}")
        else:
            lines.append(f"    {call}")
    ret = [var[driver[ir.Endpoint("", p.name)]] for p in nl.body.indicators]
    lines.append(f"    return ({''.join(r + ', ' for r in ret)})")
    return "\n".join(lines) + "\n", slots


# --------------------------------------------------------------- simulation


@dataclass(frozen=True)
class TickRecord:
    tick: int
    registers: dict          # "loop.reg" -> value before this tick's latch
    outputs: dict            # "loop.reg" -> value latched at the end of this tick
    transfers: tuple         # (channel, "read"|"write", value)
    pins: dict               # "clip.pin" -> value after this tick
    events: tuple            # (code, ref)


@dataclass
class TickTrace:
    grid_hz: int = 0
    ticks: int = 0
    records: list[TickRecord] = field(default_factory=list)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    latches: dict = field(default_factory=dict)      # clocked block -> number of ticks it ran

    def __len__(self):
        return len(self.records)

    def register_stream(self, name: str) -> list:
        return [r.registers[name] for r in self.records if name in r.registers]

    def output_stream(self, name: str) -> list:
        return [r.outputs[name] for r in self.records if name in r.outputs]


class Engine:
    """Run-time instance of one netlist."""

    def __init__(self, nl: Netlist, channels: dict | None = None, ips: dict | None = None, sim=None):
        self.nl = nl
        self.name = nl.name
        self.body = nl.body
        self.hz = nl.clock_hz
        self.channels = channels if channels is not None else {}
        self.ips = ips or {}
        self.sim = sim
        self.R = [r.init for r in nl.registers]
        self.pending: dict[int, object] = {}
        src, slots = generate(nl)
        self.source = src
        scope = {"_w32": _w32}
        exec(compile(src, f"<netlist {nl.name}>", "exec"), scope)
        self._fn = scope["_tick"]
        self.units = []
        self.K = [self._bind(n) for n in slots]
        reg_index = {r.name: i for i, r in enumerate(nl.registers)}
        kinds = {r.name: r.kind for r in nl.registers}
        self.latch_map = [(reg_index[p.name], j) for j, p in enumerate(nl.body.indicators)
                          if kinds.get(p.name) in (SHIFT, OUTPUT)]
        self.input_index = {r.name: i for i, r in enumerate(nl.registers) if r.kind in (INPUT, PARAM)}
        self.reg_names = [r.name for r in nl.registers]
        self.latched = [i for i, r in enumerate(nl.registers) if r.kind in (SHIFT, OUTPUT)]
        self.ticks = 0

    # -- node callables
    def _bind(self, n: ir.Node):
        f = pure_kernel(n)
        if f is not None:
            return f
        if n.op == "Ip":
            ip = self.ips.get(n.attrs.get("name"))
            if not isinstance(ip, IpPrimitive):
                raise RioflowError("E_UNKNOWN_IP", f"no IPIN named {n.attrs.get('name')!r}", ref=n.id)
            u = ip.fabric_unit()
            self.units.append(u)
            return u.eval
        name = n.attrs.get("channel")
        if name not in self.channels:
            raise RioflowError("E_RUNTIME", f"channel {name!r} is not instantiated", ref=f"{self.name}/{n.id}",
                               details={"cause": "unknown_channel"})
        c = self.channels[name]
        note = self._note
        gated = bool(n.attrs.get("gated"))
        if n.op == "FifoRead":
            dflt = default_payload(n.out_ports[0].type)

            def fifo_read(*en):
                if gated and not en[0]:
                    return dflt, False
                ok, v = c.try_read()
                if not ok:
                    c.underruns += 1
                    return dflt, False
                note(name, "read", v)
                return v, True
            return fifo_read
        if n.op == "FifoWrite":
            def fifo_write(v, *en):
                if gated and not en[0]:
                    return (False,)
                if c.try_write(v):
                    note(name, "write", v)
                    return (True,)
                c.overflows += 1          # dropped; hardware FIFOs do not block
                self._event("E_OVERFLOW", f"{self.name}/{n.id}")
                return (False,)
            return fifo_write
        if n.op == "RegRead":
            return lambda: (c.read(),)

        def reg_write(v):
            c.write(v)
            note(name, "write", v)
            return ()
        return reg_write

    def _note(self, channel, direction, value):
        if self.sim is not None and self.sim.record:
            self.sim._transfers.append((channel, direction, value))

    def _event(self, code, ref):
        if self.sim is not None:
            self.sim._event(code, ref)

    # -- inputs are latched at iteration boundaries
    def set_input(self, name: str, value):
        if name not in self.input_index:
            raise KeyError(f"{self.name} has no input or parameter {name!r}")
        self.pending[self.input_index[name]] = value

    def registers(self) -> dict:
        return {r.name: v for r, v in zip(self.nl.registers, self.R)}

    def tick(self):
        R = self.R
        if self.pending:
            for i, v in self.pending.items():
                R[i] = v
            self.pending.clear()
        ind = self._fn(R, self.K)
        for i, j in self.latch_map:
            R[i] = ind[j]
        for u in self.units:
            u.latch()
        self.ticks += 1
        return ind


def _channel_use(body: ir.Diagram) -> tuple[set, set]:
    reads, writes = set(), set()
    for n in (body.nodes if body is not None else ()):
        if n.op in ("FifoRead", "RegRead"):
            reads.add(n.attrs.get("channel"))
        elif n.op in ("FifoWrite", "RegWrite"):
            writes.add(n.attrs.get("channel"))
    return reads, writes


def reader_first(engines: list) -> list:
    """Order engines so a channel's readers run before its writers.

    Reads then see the state at the start of the tick and a write into a
    FIFO drained in the same tick succeeds, whatever the declaration order.
    Loops on a channel cycle keep their declaration order.
    """
    use = [_channel_use(e.body) for e in engines]
    after = {i: {j for j, (r, _) in enumerate(use) if j != i and r & use[i][1]} for i in range(len(engines))}
    done, order = set(), []
    while len(order) < len(engines):
        ready = [i for i in range(len(engines)) if i not in done and after[i] <= done]
        i = ready[0] if ready else min(set(range(len(engines))) - done)
        done.add(i)
        order.append(engines[i])
    return order


class Simulator:
    """Cycle-accurate co-simulation of netlists, CLIP blocks and DAC devices.

    All clocks run on one integer grid at the least common multiple of their
    frequencies; a block clocked at ``f`` runs on every ``grid/f``-th grid tick.
    Within a grid tick the order is: timed loops (readers of a channel before
    its writers), CLIP blocks, devices, then one tick of DMA time on every
    channel.
    """

    def __init__(self, netlists=(), channels: dict | None = None, clips=(), devices=(), ips=None,
                 record: bool = True, stimuli: dict | None = None, engines=()):
        self.channels = channels if channels is not None else {}
        self.record = record
        self.engines = reader_first([Engine(nl, self.channels, ips, self) for nl in netlists] + list(engines))
        for e in engines:
            e.sim = self
        self.clips = list(clips)
        self.devices = list(devices)
        hz = [e.hz for e in self.engines] + [c.hz for c in self.clips] + [int(d.clock_hz) for d in self.devices]
        self.grid_hz = math.lcm(*hz) if hz else 1
        self.stride = {id(x): self.grid_hz // h for x, h in
                       zip(self.engines + self.clips + self.devices, hz)}
        self.local_tick = {id(x): 0 for x in self.engines + self.clips + self.devices}
        self.stimuli = dict(stimuli or {})
        self.tick = 0
        self.trace = TickTrace(self.grid_hz)
        self._transfers: list = []
        self._events: list = []
        self._clip_bindings = [(c, dict(c.desc.bindings)) for c in self.clips]

    def engine(self, name) -> Engine:
        return next(e for e in self.engines if e.name == name)

    def _event(self, code, ref):
        self._events.append((code, ref))
        self.trace.events.append((self.tick, code, ref))

    def _due(self, x) -> bool:
        s = self.stride[id(x)]
        return s == 1 or self.tick % s == 0

    def step(self):
        t = self.tick
        rec = self.record
        pre, post, pins = {}, {}, {}
        for e in self.engines:
            if not self._due(e):
                continue
            for key, src in self.stimuli.items():
                loop, _, port = key.partition(".")
                if loop == e.name:
                    k = e.ticks
                    if callable(src):
                        e.set_input(port, src(k))
                    elif k < len(src):
                        e.set_input(port, src[k])
            if rec:
                for name, v in zip(e.reg_names, e.R):
                    pre[f"{e.name}.{name}"] = v
            e.tick()
            if rec:
                R, names = e.R, e.reg_names
                post.update({f"{e.name}.{names[i]}": R[i] for i in e.latched})
        for c, bind in self._clip_bindings:
            if not self._due(c):
                continue
            ins = {p.name: self.channels[bind[p.name]].read() for p in c.desc.inputs if p.name in bind}
            c.tick(ins)
            for p in c.desc.outputs:
                if p.name in bind:
                    self.channels[bind[p.name]].write(c.pins[p.name])
        if rec:     # pins hold their value between clock edges
            for c, _ in self._clip_bindings:
                pins.update({f"{c.name}.{k}": v for k, v in c.pins.items()})
        for d in self.devices:
            if not self._due(d):
                continue
            fire = getattr(d, "fire", None)
            if fire is not None:
                fire(self.local_tick[id(d)])
            else:
                before = d.underruns
                dac_emit(d, self.local_tick[id(d)])
                if d.underruns != before:
                    self._event("E_UNDERRUN", d.name)
            self.local_tick[id(d)] += 1
        for ch in self.channels.values():
            if hasattr(ch, "advance"):
                ch.advance()
        if rec:
            self.trace.records.append(TickRecord(t, pre, post, tuple(self._transfers), pins,
                                                 tuple(self._events)))
        self._transfers, self._events = [], []
        self.tick += 1
        self.trace.ticks = self.tick

    def run(self, nticks: int) -> TickTrace:
        if nticks < 0:
            raise ValueError("nticks must be >= 0")
        for _ in range(nticks):
            self.step()
        self.trace.latches = {x.name: (x.ticks if hasattr(x, "ticks") else None)
                              for x in self.engines + self.clips}
        return self.trace


def simulate(netlists, stimuli: dict | None = None, nticks: int = 0, channels: dict | None = None,
             clips=(), devices=(), ips=None, record: bool = True) -> TickTrace:
    """Run netlists (plus CLIP blocks and devices) for ``nticks`` grid ticks.

    ``stimuli`` maps ``"loop.input"`` to a sequence (indexed by the loop's
    own tick count) or a callable of it.
    """
    sim = Simulator(netlists, channels, clips, devices, ips, record, stimuli)
    return sim.run(nticks)


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True)
class ResourceEstimate:
    lut: int = 0
    ff: int = 0
    dsp: int = 0
    bram: int = 0

    def __post_init__(self):
        if min(self.lut, self.ff, self.dsp, self.bram) < 0:
            raise ValueError("resource counts are non-negative")

    def __add__(self, o: ResourceEstimate) -> ResourceEstimate:
        return ResourceEstimate(self.lut + o.lut, self.ff + o.ff, self.dsp + o.dsp, self.bram + o.bram)

    def as_dict(self) -> dict:
        return {"lut": self.lut, "ff": self.ff, "dsp": self.dsp, "bram": self.bram}


ZERO = ResourceEstimate()


def _op_width(n: ir.Node) -> int:
    if n.op in ("Gt", "Lt", "Eq"):
        return n.in_ports[0].type.bits
    return n.out_ports[0].type.bits if n.out_ports else 0


def _lanes(n: ir.Node) -> int:
    t = n.out_ports[0].type if n.out_ports else None
    return t.length if t is not None and t.kind == "array" else 1


def op_cost(n: ir.Node, table: DepthTable, ips: dict | None = None) -> ResourceEstimate:
    """Table entry of one combinational op."""
    if n.op == "Ip":
        ip = (ips or {}).get(n.attrs.get("name"))
        r = ip.desc.resources if ip is not None else {}
        return ResourceEstimate(r.get("lut", 0), r.get("ff", 0), r.get("dsp", 0), r.get("bram", 0))
    c = table.cost(n.op)
    if c is None:
        return ZERO
    if c.per_bit:
        w = _op_width(n)
        return ResourceEstimate(c.lut * w, c.ff * w, c.dsp * _lanes(n), c.bram)
    return ResourceEstimate(c.lut, c.ff, c.dsp * _lanes(n), c.bram)


def register_cost(r: Register, table: DepthTable) -> ResourceEstimate:
    c = table.cost("register")
    w = r.type.bits
    return ResourceEstimate(c.lut * w if c.per_bit else c.lut, c.ff * w if c.per_bit else c.ff, c.dsp, c.bram)


def buffer_cost(p: ChannelPort, table: DepthTable) -> ResourceEstimate:
    """FIFO storage is charged to the consuming side: bram per started 1024 bytes."""
    if p.direction != "read" or p.elem is None or not p.capacity:
        return ZERO
    c = table.cost("fifo_buffer")
    nbytes = p.capacity * math.ceil(p.elem.bits / 8)
    blocks = math.ceil(nbytes / 1024)
    return ResourceEstimate(c.lut * blocks, c.ff * blocks, c.dsp * blocks, c.bram * blocks)


def estimate(nl: Netlist | None, table: DepthTable | None = None, ips: dict | None = None) -> ResourceEstimate:
    """Sum of table entries over ops, registers and consumed FIFO buffers."""
    if nl is None:
        return ZERO
    table = table or DepthTable()
    total = ZERO
    for n in nl.ops:
        total += op_cost(n, table, ips)
    for r in nl.registers:
        total += register_cost(r, table)
    fifo_reads = {p.channel for p in nl.channel_ports if p.direction == "read"}
    for ch in sorted(fifo_reads):
        p = next(p for p in nl.channel_ports if p.channel == ch and p.direction == "read")
        if p.capacity and _is_fifo_port(nl, p):
            total += buffer_cost(p, table)
    return total


def _is_fifo_port(nl: Netlist, p: ChannelPort) -> bool:
    return any(n.id == p.node and n.op == "FifoRead" for n in nl.ops)


def merge(a: Netlist, b: Netlist) -> Netlist:
    """Disjoint union of two netlists (ids prefixed to keep them apart)."""
    def pre(nl, tag):
        body = nl.body
        nodes = tuple(ir.Node(f"{tag}/{n.id}", n.op, n.in_ports, n.out_ports, n.target_hint, n.attrs)
                      for n in nl.ops)
        regs = tuple(Register(f"{tag}/{r.name}", r.kind, r.type, r.init) for r in nl.registers)
        ports = tuple(ChannelPort(f"{tag}/{p.node}", p.channel, p.direction, p.capacity, p.elem)
                      for p in nl.channel_ports)
        return nodes, regs, ports, body

    na, ra, pa, _ = pre(a, a.name or "a")
    nb, rb, pb, _ = pre(b, (b.name or "b") if b.name != a.name else (b.name or "b") + "'")
    return Netlist(f"{a.name}+{b.name}", a.clock, a.clock_hz, na + nb, ra + rb, pa + pb, None)


# ------------------------------------------------------------- HLS estimate


@dataclass(frozen=True)
class HlsReport:
    ii: int
    resources: ResourceEstimate
    n_mul: int
    unroll: int
    target_ii: int | None
    met: bool | None


def _all_nodes(d: ir.Diagram):
    for n in d.nodes:
        yield n
        for _, b in ir.structure_bodies(n):
            yield from _all_nodes(b)


def hls_estimate(body: ir.Diagram, unroll: int = 1, target_ii: int | None = None,
                 table: DepthTable | None = None) -> HlsReport:
    """Multiplier-bound pipelining model.

    ``II = max(1, ceil(N_mul / U))``; the loop gets ``min(U, N_mul)``
    multipliers and every other op at its table cost.
    """
    if unroll < 1:
        raise ValueError("unroll factor must be >= 1")
    if target_ii is not None and target_ii < 1:
        raise RioflowError("E_TARGET_UNREACHABLE", f"target II {target_ii} < 1")
    table = table or DepthTable()
    nodes = list(_all_nodes(body))
    n_mul = sum(1 for n in nodes if n.op == "Mul")
    ii = max(1, math.ceil(n_mul / unroll))
    res = ZERO
    for n in nodes:
        if n.op != "Mul" and n.structure is None and n.out_ports and n.out_ports[0].type is not None:
            res += op_cost(n, table)
    res += ResourceEstimate(dsp=min(unroll, n_mul) * table.cost("Mul").dsp)
    met = None if target_ii is None else ii <= target_ii
    return HlsReport(ii, res, n_mul, unroll, target_ii, met)
