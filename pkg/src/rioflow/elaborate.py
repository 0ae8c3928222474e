"""Hierarchy expansion, type inference, host/fabric partitioning and timed-loop checks."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from . import ir
from .comm import ChannelDecl
from .errors import Diagnostic, RioflowError
from .ir import Diagram, Endpoint, Node, Port, VIGraph, Wire
from .primitives import infer, promotable
from .types import ARRAY

DEFAULT_CLOCK_HZ = 40_000_000


# ---------------------------------------------------------------- cost table


@dataclass(frozen=True)
class Cost:
    """Timing and resource cost of one primitive instance.

    ``depth_ns`` of None means the primitive is forbidden in a timed loop.
    With ``per_bit`` the lut/ff counts are multiplied by the operand width.
    """

    depth_ns: float | None = 0.0
    lut: int = 0
    ff: int = 0
    dsp: int = 0
    bram: int = 0
    per_bit: bool = False


DEFAULT_COSTS = {
    "Add": Cost(5.0, lut=1, per_bit=True),
    "Sub": Cost(5.0, lut=1, per_bit=True),
    "Gt": Cost(5.0, lut=1, per_bit=True),
    "Lt": Cost(5.0, lut=1, per_bit=True),
    "Eq": Cost(5.0, lut=1, per_bit=True),
    "And": Cost(5.0, lut=1, per_bit=True),
    "Or": Cost(5.0, lut=1, per_bit=True),
    "Not": Cost(5.0, lut=1, per_bit=True),
    "Select": Cost(3.0, lut=1, per_bit=True),
    "Mul": Cost(15.0, dsp=1),
    "Div": Cost(None),
    "Convert": Cost(2.0),
    "Const": Cost(0.0),
    "ArrayIndex": Cost(2.0, lut=1, per_bit=True),
    "ArrayBuild": Cost(0.0),
    "FifoRead": Cost(0.0),
    "FifoWrite": Cost(0.0),
    "RegRead": Cost(0.0),
    "RegWrite": Cost(0.0),
    # storage elements, not primitives
    "register": Cost(0.0, ff=1, per_bit=True),
    "fifo_buffer": Cost(0.0, bram=1),     # bram per 1024 bytes of capacity
}


@dataclass(frozen=True)
class DepthTable:
    costs: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def cost(self, op: str) -> Cost | None:
        return self.costs.get(op)

    def depth(self, op: str) -> float | None:
        c = self.costs.get(op)
        return None if c is None else c.depth_ns

    @classmethod
    def load(cls, path) -> DepthTable:
        """Default table overridden by a JSON ``{primitive: {depth_ns, lut, ff, dsp, bram}}`` map."""
        with open(path) as f:
            raw = json.load(f)
        costs = dict(DEFAULT_COSTS)
        for prim, row in raw.items():
            base = costs.get(prim, Cost())
            costs[prim] = replace(base, **{k: row[k] for k in
                                          ("depth_ns", "lut", "ff", "dsp", "bram", "per_bit") if k in row})
        return cls(costs)

    @classmethod
    def from_env(cls) -> DepthTable:
        path = os.environ.get("RIOFLOW_DEPTH_TABLE")
        return cls.load(path) if path else cls()


# ------------------------------------------------------------------- expand


def expand(p):
    """Inline every sub-VI instance; node ids get the instance path as prefix."""
    from .gtext import Project

    vis = {name: VIGraph(name, _expand(vi.diagram, p, (name,)), vi.target, vi.span)
           for name, vi in p.vis.items()}
    return Project(vis, p.top, p.channels, p.scan, dict(p.clocks), p.ip_decls, dict(p.ips))


def _expand(d: Diagram, p, stack) -> Diagram:
    # structures first, so inlined bodies are themselves flat
    nodes = []
    for n in d.nodes:
        if n.structure is not None:
            n = _expand_structure(n, p, stack)
        nodes.append(n)
    d = replace(d, nodes=tuple(nodes))
    for n in [n for n in d.nodes if n.op == ir.SUB]:
        name = n.attrs["vi"]
        if name in stack:
            path = list(stack[stack.index(name):]) + [name]
            raise RioflowError("E_RECURSION", " -> ".join(path), ref=n.id, details={"path": path})
        child = p.vis.get(name)
        if child is None:
            raise RioflowError("E_UNRESOLVED_SUBVI", f"no vi named {name!r}", ref=n.id, span=n.span)
        body = _expand(child.diagram, p, stack + (name,))
        hint = n.target_hint
        if hint == ir.INHERIT and child.target == ir.FABRIC:
            hint = ir.FABRIC
        d = _inline(d, n, body, hint)
    return d


def _expand_structure(n: Node, p, stack) -> Node:
    s = n.structure
    if n.op == ir.CASE:
        s = replace(s, cases=tuple((k, _expand(b, p, stack)) for k, b in s.cases))
    else:
        s = replace(s, body=_expand(s.body, p, stack))
    return replace(n, structure=s)


def _inline(d: Diagram, sub: Node, body: Diagram, hint: str) -> Diagram:
    pre = sub.id + "/"
    drivers: dict[str, Endpoint] = {}    # sub in-port -> parent source
    fanout: dict[str, list] = {}         # sub out-port -> parent destinations
    wires: dict[Endpoint, list] = {}

    def add(src, dst):
        wires.setdefault(src, []).append(dst)

    for w in d.wires:
        for dst in w.dsts:
            if w.src.node == sub.id:
                fanout.setdefault(w.src.port, []).append(dst)
            elif dst.node == sub.id:
                drivers[dst.port] = w.src
            else:
                add(w.src, dst)
    # a parent port may be fed straight from a child control
    for w in body.wires:
        src = Endpoint(pre + w.src.node, w.src.port) if w.src.node else drivers[w.src.port]
        for dst in w.dsts:
            if dst.node:
                add(src, Endpoint(pre + dst.node, dst.port))
            else:
                for pd in fanout.get(dst.port, []):
                    add(src, pd)
    nodes = [n for n in d.nodes if n.id != sub.id]
    for n in body.nodes:
        h = n.target_hint if n.target_hint != ir.INHERIT else hint
        nodes.append(replace(n, id=pre + n.id, target_hint=h))
    return Diagram(tuple(nodes), tuple(Wire(s, tuple(ds)) for s, ds in wires.items()),
                   d.controls, d.indicators)


# -------------------------------------------------------------- type inference


@dataclass(frozen=True)
class TypeEnv:
    channels: dict = field(default_factory=dict)   # name -> ChannelDecl
    ips: dict = field(default_factory=dict)        # name -> IpPrimitive

    @classmethod
    def of(cls, project) -> TypeEnv:
        return cls({c.name: c for c in project.channels}, dict(project.ips))


def infer_types(d: Diagram, env: TypeEnv | None = None, prefix: str = "") -> Diagram:
    """Give every port a type, inserting Convert nodes for promotions."""
    env = env or TypeEnv()
    src_type: dict[Endpoint, object] = {Endpoint("", c.name): c.type for c in d.controls}
    driver = {dst: w.src for w in d.wires for dst in w.dsts}
    converts: list[tuple[Endpoint, object]] = []     # (destination, required type)
    typed: dict[str, Node] = {}

    for n in ir.topo_order(d):
        ref = prefix + n.id
        found = {}
        for p in n.in_ports:
            src = driver.get(Endpoint(n.id, p.name))
            if src is None or src not in src_type:
                raise RioflowError("E_UNDRIVEN", "input has no typed driver", ref=f"{ref}.{p.name}", span=n.span)
            found[p.name] = src_type[src]
        if n.op == ir.SUB or n.structure is not None:
            req = {p.name: p.type for p in n.in_ports}
            outs = {p.name: p.type for p in n.out_ports}
            if n.structure is not None:
                n = _type_structure(n, env, ref + "/")
        else:
            ip = env.ips.get(n.attrs.get("name")) if n.op == "Ip" else None
            chan = env.channels.get(n.attrs.get("channel"))
            try:
                req, outs = infer(n.op, n.attrs, found, ref, ip=ip, channel=chan.elem if chan else None)
            except RioflowError as e:
                if e.span is None:
                    e.span = n.span
                raise
        for pname, t in found.items():
            want = req[pname]
            if t != want:
                if not promotable(t, want):
                    raise RioflowError("E_TYPE_MISMATCH", f"found {t}, expected {want}", ref=f"{ref}.{pname}",
                                       span=n.span, details={"found": str(t), "expected": str(want)})
                converts.append((Endpoint(n.id, pname), want))
        n = ir.with_ports(n, [Port(p.name, req[p.name]) for p in n.in_ports],
                          [Port(p.name, outs[p.name]) for p in n.out_ports])
        typed[n.id] = n
        for p in n.out_ports:
            src_type[Endpoint(n.id, p.name)] = p.type
    for ind in d.indicators:
        dst = Endpoint("", ind.name)
        src = driver.get(dst)
        if src is None:
            raise RioflowError("E_UNDRIVEN", "indicator not wired", ref=prefix + ind.name)
        t = src_type[src]
        if t != ind.type:
            if not promotable(t, ind.type):
                raise RioflowError("E_TYPE_MISMATCH", f"found {t}, expected {ind.type}", ref=prefix + ind.name,
                                   details={"found": str(t), "expected": str(ind.type)})
            converts.append((dst, ind.type))
    return _insert_converts(d, typed, converts, driver, src_type)


def _insert_converts(d, typed, converts, driver, src_type) -> Diagram:
    """One Convert per (source, target type), shared by every destination needing it."""
    wires: dict[Endpoint, list] = {w.src: list(w.dsts) for w in d.wires}
    nodes = dict(typed)
    made: dict[tuple, str] = {}
    for dst, want in converts:
        src = driver[dst]
        wires[src].remove(dst)
        cid = made.get((src, want))
        if cid is None:
            base = f"{dst.node}_{dst.port}_cvt" if dst.node else f"{dst.port}_cvt"
            cid, k = base, 1
            while cid in nodes:
                k += 1
                cid = f"{base}{k}"
            nodes[cid] = Node(cid, "Convert", (Port("x", src_type[src]),), (Port("out", want),),
                              attrs={"to": want})
            made[(src, want)] = cid
            wires[src].append(Endpoint(cid, "x"))
            wires[Endpoint(cid, "out")] = []
        wires[Endpoint(cid, "out")].append(dst)
    return Diagram(tuple(nodes.values()), tuple(Wire(s, tuple(ds)) for s, ds in wires.items() if ds),
                   d.controls, d.indicators)


def _type_structure(n: Node, env, prefix) -> Node:
    s = n.structure
    if n.op == ir.CASE:
        return replace(n, structure=replace(
            s, cases=tuple((k, infer_types(b, env, f"{prefix}[{k}]/")) for k, b in s.cases)))
    return replace(n, structure=replace(s, body=infer_types(s.body, env, prefix)))


def infer_project(p):
    """Type every VI of an (expanded) project."""
    from .gtext import Project

    env = TypeEnv.of(p)
    vis = {name: replace(vi, diagram=infer_types(vi.diagram, env, name + "/")) for name, vi in p.vis.items()}
    return Project(vis, p.top, p.channels, p.scan, dict(p.clocks), p.ip_decls, dict(p.ips))


# ----------------------------------------------------------- timed-loop check


@dataclass(frozen=True)
class SctlReport:
    loop: str
    clock_hz: float
    path_ns: float
    period_ns: float
    critical_path: tuple[str, ...]
    errors: tuple[Diagnostic, ...] = ()

    @property
    def feasible(self) -> bool:
        return not self.errors

    @property
    def slack_ns(self) -> float:
        return self.period_ns - self.path_ns

    def raise_for_errors(self):
        if self.errors:
            e = RioflowError.from_diagnostics(list(self.errors))
            e.details.update(path=list(self.critical_path), path_ns=self.path_ns, period_ns=self.period_ns)
            raise e


def node_depth(n: Node, table: DepthTable, ips: dict) -> float | None:
    if n.op == "Ip":
        ip = ips.get(n.attrs.get("name"))
        return None if ip is None else ip.depth_ns
    if n.structure is not None or n.op == ir.SUB:
        return None
    return table.depth(n.op)


def _registered(n: Node, ips) -> bool:
    ip = ips.get(n.attrs.get("name")) if n.op == "Ip" else None
    return ip is not None and ip.latency > 0


def illegal_nodes(body: Diagram, table: DepthTable, ips: dict, loop="") -> list[Diagnostic]:
    out = []
    for n in body.nodes:
        why = None
        if n.op in (ir.FOR, ir.WHILE, ir.SCTL, ir.CASE):
            why = f"{n.op} structure"
        elif n.op == ir.SUB:
            why = "unexpanded sub-VI"
        elif n.op in ir.HOST_ONLY:
            why = f"host-only primitive {n.op}"
        elif node_depth(n, table, ips) is None:
            why = f"{n.op} has no single-cycle implementation"
        if why:
            out.append(Diagnostic("E_SCTL_ILLEGAL_NODE", f"{loop}/{n.id}" if loop else n.id,
                                  f"{why} inside a timed loop", n.span))
    return out


def longest_path(body: Diagram, table: DepthTable, ips: dict | None = None) -> tuple[float, list[str]]:
    """Critical combinational path through a body (ns, node ids)."""
    ips = ips or {}
    arrival: dict[str, float] = {}
    best_pred: dict[str, str | None] = {}
    preds: dict[str, set] = {n.id: set() for n in body.nodes}
    for w in body.wires:
        if w.src.node:
            for dst in w.dsts:
                if dst.node:
                    preds[dst.node].add(w.src.node)
    for n in ir.topo_order(body):
        depth = node_depth(n, table, ips) or 0.0
        start, via = 0.0, None
        for p in sorted(preds[n.id]):
            # registered IP outputs launch a fresh path
            if _registered(body.node(p), ips):
                continue
            if via is None or arrival[p] > start:
                start, via = arrival[p], p
        arrival[n.id] = start + depth
        best_pred[n.id] = via
    if not arrival:
        return 0.0, []
    end = max(sorted(arrival), key=lambda k: arrival[k])
    path = [end]
    while best_pred[path[-1]] is not None:
        path.append(best_pred[path[-1]])
    return arrival[end], path[::-1]


def check_sctl(loop: Node | ir.TimedLoop, clock_hz: float = DEFAULT_CLOCK_HZ,
               table: DepthTable | None = None, ips: dict | None = None) -> SctlReport:
    """Single-cycle feasibility of a timed loop body at ``clock_hz``."""
    table = table or DepthTable()
    ips = ips or {}
    name = loop.id if isinstance(loop, Node) else ""
    s = loop.structure if isinstance(loop, Node) else loop
    period = 1e9 / clock_hz
    errors = illegal_nodes(s.body, table, ips, name)
    if errors:
        return SctlReport(name, clock_hz, 0.0, period, (), tuple(errors))
    path_ns, path = longest_path(s.body, table, ips)
    if path_ns > period + 1e-9:
        errors.append(Diagnostic("E_SCTL_TIMING", name,
                                 f"critical path {path_ns:g} ns > period {period:g} ns via "
                                 + " -> ".join(path)))
    return SctlReport(name, clock_hz, path_ns, period, tuple(path), tuple(errors))


# ---------------------------------------------------------------- partition


@dataclass(frozen=True)
class FabricLoop:
    node: Node
    clock: str
    clock_hz: int
    netlist: object = None


@dataclass(frozen=True)
class ChannelBinding:
    channel: ChannelDecl
    host_endpoint: str | None
    fabric_endpoint: str | None


@dataclass(frozen=True)
class DeploymentPlan:
    host: Diagram
    fabric_loops: tuple[FabricLoop, ...]
    channel_bindings: tuple[ChannelBinding, ...]
    scan_bindings: tuple[tuple[str, str], ...]     # (scan channel, host node)
    fabric_inputs: dict      # (loop id, port) -> top-level control
    fabric_outputs: dict     # top-level indicator -> (loop id, port)
    controls: tuple[Port, ...] = ()
    indicators: tuple[Port, ...] = ()


def _channel_nodes(d: Diagram, prefix=""):
    for n in d.nodes:
        if n.op in ("FifoRead", "FifoWrite", "RegRead", "RegWrite", "ScanRead", "ScanWrite"):
            yield prefix + n.id, n
        for sub_prefix, body in ir.structure_bodies(n):
            yield from _channel_nodes(body, prefix + sub_prefix + "/")


def partition_diagnostics(p) -> tuple[DeploymentPlan | None, list[Diagnostic]]:
    vi = p.top_vi
    d = vi.diagram
    diags: list[Diagnostic] = []
    side: dict[str, str] = {}
    for n in d.nodes:
        if n.op == ir.SCTL:
            side[n.id] = ir.FABRIC
        elif n.target_hint in (ir.HOST, ir.FABRIC):
            side[n.id] = n.target_hint
        else:
            side[n.id] = vi.target
        if n.op == ir.SCTL:
            for m in n.structure.body.nodes:
                if m.op in ir.HOST_ONLY:
                    diags.append(Diagnostic("E_HOST_PRIM_IN_FABRIC", f"{n.id}/{m.id}",
                                            f"{m.op} cannot run on the fabric", m.span))
        elif side[n.id] == ir.FABRIC:
            if n.op in ir.HOST_ONLY:
                diags.append(Diagnostic("E_HOST_PRIM_IN_FABRIC", n.id, f"{n.op} cannot run on the fabric",
                                        n.span))
            else:
                diags.append(Diagnostic("E_FABRIC_DATAFLOW", n.id,
                                        "fabric code must live inside a timed loop", n.span))
    fabric_inputs, fabric_outputs = {}, {}
    host_wires = []
    for w in d.wires:
        s_side = side.get(w.src.node) if w.src.node else None
        host_dsts = []
        for dst in w.dsts:
            d_side = side.get(dst.node) if dst.node else None
            if s_side and d_side and s_side != d_side:
                diags.append(Diagnostic("E_BOUNDARY_WIRE", f"{w.src} -> {dst}",
                                        "wire crosses the host/fabric boundary without a channel", w.span))
            elif d_side == ir.FABRIC:
                fabric_inputs[(dst.node, dst.port)] = w.src.port
            elif s_side == ir.FABRIC:
                fabric_outputs[dst.port] = (w.src.node, w.src.port)
            else:
                host_dsts.append(dst)
        if host_dsts:
            host_wires.append(Wire(w.src, tuple(host_dsts), w.span))

    # channel endpoints
    uses: dict[str, list] = {}
    for path, n in _channel_nodes(d):
        top = path.split("/")[0].split("[")[0]
        s = side.get(top, ir.HOST)
        uses.setdefault(n.attrs["channel"], []).append((s, path, n.op))
    bindings, scan_bindings = [], []
    for ch in p.channels:
        host_ep = fabric_ep = None
        for s, path, op in uses.get(ch.name, []):
            writes = op.endswith("Write")
            want = ch.src if writes else ch.dst
            if s != want:
                diags.append(Diagnostic("E_CHANNEL_DIRECTION", path,
                                        f"{op} on {s} side, channel {ch.name} is {ch.src} -> {ch.dst}"))
            if s == ir.HOST:
                host_ep = host_ep or path
            else:
                fabric_ep = fabric_ep or path
        bindings.append(ChannelBinding(ch, host_ep, fabric_ep))
    if p.scan is not None:
        for c in p.scan.channels:
            us = uses.get(c.name, [])
            writers = [u for u in us if u[2] == "ScanWrite"]
            if len(writers) > 1:
                diags.append(Diagnostic("E_CHANNEL_OWNERSHIP", c.name,
                                        "scan output written by more than one node"))
            for s, path, op in us:
                if s != ir.HOST:
                    diags.append(Diagnostic("E_CHANNEL_OWNERSHIP", path,
                                            "scan channels are owned by the scan engine"))
                scan_bindings.append((c.name, path))

    loops = tuple(FabricLoop(n, n.structure.clock, int(p.clocks.get(n.structure.clock, DEFAULT_CLOCK_HZ)))
                  for n in d.nodes if side[n.id] == ir.FABRIC and n.op == ir.SCTL)
    host_nodes = tuple(n for n in d.nodes if side[n.id] == ir.HOST)
    host = Diagram(host_nodes, tuple(host_wires), d.controls,
                   tuple(i for i in d.indicators if i.name not in fabric_outputs))
    if not diags:
        diags.extend(ir.validate(host))
    plan = DeploymentPlan(host, loops, tuple(bindings), tuple(scan_bindings), fabric_inputs,
                          fabric_outputs, d.controls, d.indicators)
    return (None if diags else plan), diags


def partition(p) -> DeploymentPlan:
    """Split an expanded, typed project into host and fabric parts."""
    plan, diags = partition_diagnostics(p)
    if diags:
        raise RioflowError.from_diagnostics(diags)
    return plan


def elaborate(p, table: DepthTable | None = None):
    """expand -> infer_types -> partition -> check every timed loop.

    Returns ``(flat project, plan, reports)``; raises on the first error class.
    """
    table = table or DepthTable()
    flat = infer_project(expand(p))
    plan = partition(flat)
    reports = [check_sctl(fl.node, fl.clock_hz, table, flat.ips) for fl in plan.fabric_loops]
    return flat, plan, reports


def diagram_is_array_free(d: Diagram) -> bool:
    return all(p.type is None or p.type.kind != ARRAY for n in d.nodes for p in n.in_ports + n.out_ports)
