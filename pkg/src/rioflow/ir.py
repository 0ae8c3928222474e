"""Dataflow IR: nodes, wires, diagrams, structures and VI graphs."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

from .errors import Diagnostic, RioflowError, SourceSpan
from .types import BOOL, I32, WireType

HOST, FABRIC, INHERIT = "host", "fabric", "inherit"

# structure ops; everything else is a primitive name or "sub"
FOR, WHILE, CASE, SCTL, SUB = "for", "while", "case", "sctl", "sub"
STRUCTURE_OPS = (FOR, WHILE, CASE, SCTL)


class Endpoint(NamedTuple):
    """``node == ""`` addresses a diagram boundary port (control or indicator)."""

    node: str
    port: str

    def __str__(self):
        return f"{self.node}.{self.port}" if self.node else self.port


@dataclass(frozen=True)
class Port:
    name: str
    type: WireType | None = None


@dataclass(frozen=True)
class Wire:
    src: Endpoint
    dsts: tuple[Endpoint, ...]
    span: SourceSpan | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "src", Endpoint(*self.src))
        object.__setattr__(self, "dsts", tuple(sorted(Endpoint(*d) for d in self.dsts)))

    @property
    def id(self) -> str:
        return str(self.src)


@dataclass(frozen=True)
class ShiftRegister:
    """Loop-carried value: body control ``name`` is the left terminal,
    body indicator ``name`` the right terminal."""

    name: str
    type: WireType
    init: Any


@dataclass(frozen=True)
class ForLoop:
    body: Diagram
    shift_registers: tuple[ShiftRegister, ...] = ()
    unroll: int = 1
    target_ii: int | None = None


@dataclass(frozen=True)
class WhileLoop:
    body: Diagram
    shift_registers: tuple[ShiftRegister, ...] = ()
    unroll: int = 1
    target_ii: int | None = None


@dataclass(frozen=True)
class Case:
    selector: WireType
    cases: tuple[tuple[Any, Diagram], ...]
    default: Any = None

    def __post_init__(self):
        # canonical branch order so equality ignores declaration order
        object.__setattr__(self, "cases", tuple(sorted(self.cases, key=lambda kd: kd[0])))

    def branch(self, key):
        for k, d in self.cases:
            if k == key:
                return k, d
        for k, d in self.cases:
            if k == self.default:
                return k, d
        return None, None


@dataclass(frozen=True)
class TimedLoop:
    """Single-cycle timed loop: one body iteration per tick of ``clock``."""

    body: Diagram
    clock: str
    params: tuple[str, ...] = ()
    shift_registers: tuple[ShiftRegister, ...] = ()


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    in_ports: tuple[Port, ...] = ()
    out_ports: tuple[Port, ...] = ()
    target_hint: str = INHERIT
    attrs: dict = field(default_factory=dict)
    structure: ForLoop | WhileLoop | Case | TimedLoop | None = None
    span: SourceSpan | None = field(default=None, compare=False)

    def in_port(self, name) -> Port | None:
        return next((p for p in self.in_ports if p.name == name), None)

    def out_port(self, name) -> Port | None:
        return next((p for p in self.out_ports if p.name == name), None)


@dataclass(frozen=True)
class Diagram:
    nodes: tuple[Node, ...] = ()
    wires: tuple[Wire, ...] = ()
    controls: tuple[Port, ...] = ()
    indicators: tuple[Port, ...] = ()

    def __post_init__(self):
        # canonical storage order so equality ignores construction order
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "wires", tuple(sorted(self.wires, key=lambda w: (w.src, w.dsts))))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "indicators", tuple(self.indicators))

    def node(self, node_id) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def control(self, name) -> Port | None:
        return next((p for p in self.controls if p.name == name), None)

    def indicator(self, name) -> Port | None:
        return next((p for p in self.indicators if p.name == name), None)

    def driver_of(self, dst: Endpoint) -> Endpoint | None:
        for w in self.wires:
            if dst in w.dsts:
                return w.src
        return None


@dataclass(frozen=True)
class VIGraph:
    name: str
    diagram: Diagram
    target: str = HOST
    span: SourceSpan | None = field(default=None, compare=False)

    @property
    def connector_pane(self) -> tuple[Port, ...]:
        return self.diagram.controls + self.diagram.indicators


# ---------------------------------------------------------------- structures


def structure_ports(op: str, s) -> tuple[tuple[Port, ...], tuple[Port, ...]]:
    """Parent-side (in_ports, out_ports) of a structure node."""
    if op == CASE:
        first = s.cases[0][1] if s.cases else Diagram()
        return (Port("selector", s.selector),) + first.controls, first.indicators
    body = s.body
    shift = {r.name for r in s.shift_registers}
    hidden_in = set(shift)
    hidden_out = set(shift)
    ins: tuple[Port, ...] = ()
    if op == FOR:
        ins = (Port("N", I32),)
        hidden_in.add("i")
    elif op == WHILE:
        hidden_in.add("i")
        hidden_out.add("stop")
    ins += tuple(p for p in body.controls if p.name not in hidden_in)
    outs = tuple(Port(r.name, r.type) for r in s.shift_registers)
    outs += tuple(p for p in body.indicators if p.name not in hidden_out)
    return ins, outs


def structure_bodies(node: Node) -> list[tuple[str, Diagram]]:
    s = node.structure
    if s is None:
        return []
    if node.op == CASE:
        return [(f"{node.id}[{k}]", d) for k, d in s.cases]
    return [(node.id, s.body)]


def make_structure_node(node_id, op, structure, *, target_hint=INHERIT, attrs=None, span=None) -> Node:
    ins, outs = structure_ports(op, structure)
    return Node(node_id, op, ins, outs, target_hint, dict(attrs or {}), structure, span)


# --------------------------------------------------------------- validation

# primitives that may never appear inside a timed loop
HOST_ONLY = frozenset({"Div", "Biquad", "FileReadPCM", "ScanRead", "ScanWrite"})


def validate(vi: VIGraph | Diagram) -> list[Diagnostic]:
    """Structural check; returns an empty list iff every invariant holds."""
    d = vi.diagram if isinstance(vi, VIGraph) else vi
    out: list[Diagnostic] = []
    _validate_diagram(d, "", out, in_timed_loop=False)
    return out


def _validate_diagram(d: Diagram, prefix: str, out: list, in_timed_loop: bool):
    nodes: dict[str, Node] = {}
    for n in d.nodes:
        ref = prefix + n.id
        if n.id in nodes:
            out.append(Diagnostic("E_DUP_NAME", ref, "duplicate node id", n.span))
        nodes[n.id] = n
        for ports, side in ((n.in_ports, "input"), (n.out_ports, "output")):
            names = [p.name for p in ports]
            if len(names) != len(set(names)):
                out.append(Diagnostic("E_DUP_PORT", ref, f"duplicate {side} port name", n.span))
        if in_timed_loop and (n.op in (FOR, WHILE) or n.op in HOST_ONLY):
            out.append(Diagnostic("E_SCTL_ILLEGAL_NODE", ref,
                                  f"{n.op} is not allowed inside a timed loop", n.span))
    for side, ports in (("control", d.controls), ("indicator", d.indicators)):
        names = [p.name for p in ports]
        if len(names) != len(set(names)):
            out.append(Diagnostic("E_DUP_NAME", prefix.rstrip("/"), f"duplicate {side} name"))

    drivers: dict[Endpoint, Wire] = {}
    for w in d.wires:
        ref = prefix + w.id
        if not w.dsts:
            out.append(Diagnostic("E_NO_SINK", ref, "wire has no destination", w.span))
        if not _endpoint_ok(d, nodes, w.src, source=True):
            out.append(Diagnostic("E_UNKNOWN_ENDPOINT", ref, f"no source {w.src}", w.span))
        for dst in w.dsts:
            if not _endpoint_ok(d, nodes, dst, source=False):
                out.append(Diagnostic("E_UNKNOWN_ENDPOINT", ref, f"no destination {dst}", w.span))
            if dst in drivers:
                out.append(Diagnostic("E_MULTI_DRIVER", prefix + str(dst),
                                      f"{dst} driven by {drivers[dst].src} and {w.src}", w.span))
            else:
                drivers[dst] = w
    for n in d.nodes:
        for p in n.in_ports:
            if Endpoint(n.id, p.name) not in drivers:
                out.append(Diagnostic("E_UNDRIVEN", f"{prefix}{n.id}.{p.name}", "input not wired", n.span))
    for p in d.indicators:
        if Endpoint("", p.name) not in drivers:
            out.append(Diagnostic("E_UNDRIVEN", prefix + p.name, "indicator not wired"))

    for cyc in _cycles(d, nodes):
        out.append(Diagnostic("E_CYCLE", prefix + cyc[0], "cycle through " + " -> ".join(cyc),
                              nodes[cyc[0]].span))

    for n in d.nodes:
        if n.structure is not None:
            _validate_structure(n, prefix, out, in_timed_loop)


def _endpoint_ok(d, nodes, ep: Endpoint, source: bool) -> bool:
    if ep.node == "":
        return (d.control(ep.port) if source else d.indicator(ep.port)) is not None
    n = nodes.get(ep.node)
    if n is None:
        return False
    return (n.out_port(ep.port) if source else n.in_port(ep.port)) is not None


def _validate_structure(n: Node, prefix: str, out: list, in_timed_loop: bool):
    s = n.structure
    ref = prefix + n.id
    timed = n.op == SCTL
    if timed and in_timed_loop:
        out.append(Diagnostic("E_SCTL_ILLEGAL_NODE", ref, "nested timed loop", n.span))
    for r in getattr(s, "shift_registers", ()):
        left, right = s.body.control(r.name), s.body.indicator(r.name)
        if left is None or right is None or left.type != r.type or right.type != r.type:
            out.append(Diagnostic("E_SHIFT_REGISTER", f"{ref}.{r.name}",
                                  "shift register needs left and right terminals of its type", n.span))
    if n.op == WHILE:
        stop = s.body.indicator("stop")
        if stop is None or stop.type not in (None, BOOL):
            out.append(Diagnostic("E_STOP_TERMINAL", ref, "while loop needs a bool 'stop' indicator", n.span))
    if timed:
        for p in s.params:
            c = s.body.control(p)
            if c is None or c.type != I32:
                out.append(Diagnostic("E_PARAM", f"{ref}.{p}", "run-time parameter must be an i32 control",
                                      n.span))
    if n.op == CASE:
        pane = None
        for key, body in s.cases:
            this = (body.controls, body.indicators)
            if pane is not None and this != pane:
                out.append(Diagnostic("E_CASE_PANE", f"{ref}[{key}]",
                                      "case branches must share one interface", n.span))
            pane = pane or this
    for sub_prefix, body in structure_bodies(n):
        _validate_diagram(body, sub_prefix + "/", out, in_timed_loop or timed)


def _cycles(d: Diagram, nodes: dict[str, Node]) -> list[list[str]]:
    """Nontrivial strongly connected components (and self loops), sorted."""
    succ = _successors(d, nodes)
    index, low, stack, on_stack, comps = {}, {}, [], set(), []
    counter = [0]

    def strong(v):
        # iterative Tarjan to avoid recursion limits on long chains
        work = [(v, iter(sorted(succ[v])))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            u, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(succ[w]))))
                    advanced = True
                    break
                if w in on_stack:
                    low[u] = min(low[u], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[u])
            if low[u] == index[u]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == u:
                        break
                if len(comp) > 1 or u in succ[u]:
                    comps.append(sorted(comp))

    for v in sorted(nodes):
        if v not in index:
            strong(v)
    return sorted(comps)


def _successors(d: Diagram, nodes) -> dict[str, set[str]]:
    succ = {nid: set() for nid in nodes}
    for w in d.wires:
        if w.src.node in succ:
            for dst in w.dsts:
                if dst.node in succ:
                    succ[w.src.node].add(dst.node)
    return succ


def topo_order(d: Diagram) -> list[Node]:
    """Deterministic topological order; ties go to the smallest node id."""
    nodes = d.node_map()
    succ = _successors(d, nodes)
    indeg = {nid: 0 for nid in nodes}
    for s in succ.values():
        for t in s:
            indeg[t] += 1
    heap = [nid for nid, k in indeg.items() if k == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        nid = heapq.heappop(heap)
        order.append(nodes[nid])
        for t in succ[nid]:
            indeg[t] -= 1
            if indeg[t] == 0:
                heapq.heappush(heap, t)
    if len(order) != len(nodes):
        stuck = sorted(nid for nid, k in indeg.items() if k > 0)
        raise RioflowError("E_CYCLE", "diagram is not acyclic", ref=stuck[0], details={"nodes": stuck})
    return order


def with_ports(node: Node, in_ports=None, out_ports=None) -> Node:
    return replace(node,
                   in_ports=node.in_ports if in_ports is None else tuple(in_ports),
                   out_ports=node.out_ports if out_ports is None else tuple(out_ports))
