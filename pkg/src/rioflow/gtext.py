"""gtext: the textual form of a dataflow project.

Whitespace (including newlines) separates tokens; ``#`` starts a comment.
A small example::

    clock fab 40000000 Hz
    channel audio fifo<i32, 64> host -> fabric
    vi Add2 {
      control a: f64
      control b: f64
      indicator s: f64
      node n1: Add
      wire a -> n1.x
      wire b -> n1.y
      wire n1.sum -> s
    }

:func:`format_project` emits the canonical layout, and
``parse(format_project(p)) == p`` for every valid project.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import ir
from .comm import ChannelDecl, DmaModel
from .errors import RioflowError, SourceSpan
from .ip import IpDescriptor
from .ir import Diagram, Endpoint, Node, Port, ShiftRegister, VIGraph, Wire
from .primitives import PRIMITIVES, port_names
from .scanio import ScanChannel, ScanConfig
from .types import BOOL, F64, I32, WireType, array, cluster, coerce, fxp

KEYWORDS = frozenset({
    "vi", "control", "indicator", "node", "wire", "while", "for", "case", "sctl", "channel",
    "register", "scan", "clock", "target", "param", "shift", "branch", "default", "sub", "top",
    "ip", "fifo", "dma", "period", "unroll", "ii", "true", "false", "in", "out", "gain", "offset",
    "bits", "host", "fabric", "inherit", "bool", "i32", "f64", "fxp", "cluster", "Hz", "us"})
TYPE_WORDS = ("bool", "i32", "f64", "fxp", "cluster")
NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_/]*\Z")


def _int_literal(s: str) -> int:
    """Hex or decimal; leading zeros in a decimal are just zeros."""
    neg = s.startswith("-")
    body = s[1:] if neg else s
    v = int(body, 16) if body[:2] in ("0x", "0X") else int(body, 10)
    return -v if neg else v


class ParseError(RioflowError):
    """Any failure while reading gtext; always carries a span inside the input."""


@dataclass(frozen=True)
class IpDecl:
    name: str
    path: str


@dataclass(frozen=True)
class Project:
    vis: dict
    top: str
    channels: tuple[ChannelDecl, ...] = ()
    scan: ScanConfig | None = None
    clocks: dict = field(default_factory=dict)
    ip_decls: tuple[IpDecl, ...] = ()
    ips: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(sorted(self.channels, key=lambda c: c.name)))
        object.__setattr__(self, "ip_decls", tuple(sorted(self.ip_decls, key=lambda d: d.name)))

    @property
    def top_vi(self) -> VIGraph:
        return self.vis[self.top]

    def channel(self, name) -> ChannelDecl | None:
        return next((c for c in self.channels if c.name == name), None)


# -------------------------------------------------------------------- lexer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<arrow>->)
  | (?P<num>-?(?:0[xX][0-9A-Fa-f]+|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?))
  | (?P<name>[A-Za-z_][A-Za-z0-9_/]*)
  | (?P<punct>[{}()<>\[\];:,.=])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str, file: str) -> list[Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError("E_SYNTAX", f"unexpected character {text[pos]!r}",
                             span=SourceSpan(file, line, pos - line_start + 1))
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1))
    return toks


# ------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str, file: str):
        self.file = file
        self.toks = _tokenize(text, file)
        self.i = 0

    # token helpers
    def peek(self, k=0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def span(self, t: Tok | None = None) -> SourceSpan:
        t = t or self.peek()
        return SourceSpan(self.file, t.line, t.col, max(1, len(t.text)))

    def error(self, code, msg, tok=None):
        raise ParseError(code, msg, span=self.span(tok))

    def next(self) -> Tok:
        t = self.peek()
        self.i += 1
        return t

    def at(self, text) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("name", "punct", "arrow")

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text) -> Tok:
        if not self.at(text):
            t = self.peek()
            self.error("E_SYNTAX", f"expected {text!r}, found {t.text or 'end of input'!r}")
        return self.next()

    def name(self, what="name") -> Tok:
        t = self.peek()
        if t.kind != "name" or t.text in KEYWORDS:
            self.error("E_SYNTAX", f"expected {what}, found {t.text or 'end of input'!r}")
        return self.next()

    def int_(self, what="integer") -> int:
        t = self.peek()
        if t.kind != "num" or not re.fullmatch(r"-?(0[xX][0-9A-Fa-f]+|\d+)", t.text):
            self.error("E_SYNTAX", f"expected {what}, found {t.text or 'end of input'!r}")
        self.next()
        return _int_literal(t.text)

    def number(self):
        t = self.peek()
        if t.kind != "num":
            self.error("E_SYNTAX", f"expected number, found {t.text or 'end of input'!r}")
        self.next()
        s = t.text
        if re.fullmatch(r"-?(0[xX][0-9A-Fa-f]+|\d+)", s):
            return _int_literal(s)
        return float(s)

    # grammar
    def type_(self) -> WireType:
        t = self.peek()
        try:
            if self.accept("bool"):
                return BOOL
            if self.accept("i32"):
                return I32
            if self.accept("f64"):
                return F64
            if self.accept("fxp"):
                self.expect("<")
                w = self.int_("word length")
                self.expect(",")
                i = self.int_("integer length")
                self.expect(">")
                return fxp(w, i)
            if self.accept("cluster"):
                self.expect("<")
                fields = [self.type_()]
                while self.accept(","):
                    fields.append(self.type_())
                self.expect(">")
                return cluster(*fields)
            if self.accept("["):
                elem = self.type_()
                self.expect(";")
                n = self.int_("array length")
                self.expect("]")
                return array(elem, n)
        except ValueError as e:
            self.error("E_SYNTAX", f"bad type: {e}", t)
        self.error("E_SYNTAX", f"expected a type, found {t.text or 'end of input'!r}")

    def literal(self):
        if self.accept("true"):
            return True
        if self.accept("false"):
            return False
        if self.accept("["):
            items = []
            if not self.at("]"):
                items.append(self.literal())
                while self.accept(","):
                    items.append(self.literal())
            self.expect("]")
            return tuple(items)
        return self.number()

    def _type_ahead(self) -> bool:
        k = 0
        while self.peek(k).text == "[" and self.peek(k).kind == "punct":
            k += 1
        t = self.peek(k)
        return t.kind == "name" and t.text in TYPE_WORDS

    def attr_value(self):
        t = self.peek()
        if self._type_ahead():
            return self.type_()
        if t.kind == "string":
            self.next()
            return _unquote(t.text)
        if t.kind == "name" and t.text not in ("true", "false"):
            self.next()
            return t.text
        return self.literal()

    def attrs(self) -> dict:
        out = {}
        if not self.accept("("):
            return out
        if not self.at(")"):
            while True:
                k = self.peek()
                if k.kind != "name":
                    self.error("E_SYNTAX", f"expected attribute name, found {k.text or 'end of input'!r}")
                self.next()
                if k.text in out:
                    self.error("E_DUP_NAME", f"duplicate attribute {k.text!r}", k)
                self.expect("=")
                out[k.text] = self.attr_value()
                if not self.accept(","):
                    break
        self.expect(")")
        return out

    def target(self, default):
        if self.accept("target"):
            t = self.peek()
            if t.text not in (ir.HOST, ir.FABRIC):
                self.error("E_SYNTAX", "target must be host or fabric")
            self.next()
            return t.text
        return default

    def side(self) -> str:
        t = self.peek()
        if t.text not in (ir.HOST, ir.FABRIC):
            self.error("E_SYNTAX", f"expected host or fabric, found {t.text or 'end of input'!r}")
        self.next()
        return t.text

    def endpoint(self) -> tuple[Endpoint, Tok]:
        first = self.name("endpoint")
        if self.accept("."):
            port = self.next()
            if port.kind != "name":
                self.error("E_SYNTAX", "expected port name", port)
            return Endpoint(first.text, port.text), first
        return Endpoint("", first.text), first

    # top level
    def project(self):
        p = _ProjectBuilder(self)
        while self.peek().kind != "eof":
            t = self.peek()
            if self.accept("clock"):
                n = self.name("clock name")
                hz = self.int_("frequency")
                self.expect("Hz")
                if hz <= 0:
                    self.error("E_SYNTAX", "clock frequency must be positive", n)
                p.add_clock(n, hz)
            elif self.accept("channel"):
                n = self.name("channel name")
                self.expect("fifo")
                self.expect("<")
                elem = self.type_()
                self.expect(",")
                cap = self.int_("capacity")
                self.expect(">")
                if cap < 1:
                    self.error("E_SYNTAX", "fifo capacity must be >= 1", n)
                src = self.side()
                self.expect("->")
                dst = self.side()
                dma = None
                if self.accept("dma"):
                    vals = [self.int_("dma base"), self.int_("dma per-element"), self.int_("dma burst")]
                    try:
                        dma = DmaModel(*vals)
                    except ValueError as e:
                        self.error("E_SYNTAX", str(e), n)
                p.add_channel(ChannelDecl(n.text, "fifo", elem, cap, src, dst, dma, None, self.span(n)), n)
            elif self.accept("register"):
                n = self.name("register name")
                self.expect("<")
                elem = self.type_()
                self.expect(">")
                src, dst = ir.HOST, ir.FABRIC
                if self.at(ir.HOST) or self.at(ir.FABRIC):
                    src = self.side()
                    self.expect("->")
                    dst = self.side()
                init = None
                if self.accept("="):
                    lt = self.peek()
                    init = self._coerce(elem, self.literal(), lt)
                p.add_channel(ChannelDecl(n.text, "register", elem, 1, src, dst, None, init, self.span(n)), n)
            elif self.accept("scan"):
                if self.accept("period"):
                    v = self.int_("scan period")
                    self.expect("us")
                    if v <= 0:
                        self.error("E_SYNTAX", "scan period must be > 0", t)
                    p.set_scan_period(v, t)
                else:
                    d = self.peek()
                    if d.text not in ("in", "out"):
                        self.error("E_SYNTAX", "expected period, in or out after scan")
                    self.next()
                    n = self.name("scan channel name")
                    self.expect(":")
                    ty = self.type_()
                    self.expect("gain")
                    gain = float(self.number())
                    self.expect("offset")
                    off = float(self.number())
                    bits = 16
                    if self.accept("bits"):
                        bits = self.int_("bits")
                    if gain == 0 or not 1 <= bits <= 64:
                        self.error("E_SYNTAX", "scan channel needs nonzero gain and 1..64 bits", n)
                    p.add_scan(ScanChannel(n.text, d.text, ty, gain, off, bits, self.span(n)), n)
            elif self.accept("ip"):
                n = self.name("ip name")
                s = self.peek()
                if s.kind != "string":
                    self.error("E_SYNTAX", "expected descriptor path string")
                self.next()
                p.add_ip(IpDecl(n.text, _unquote(s.text)), n)
            elif self.accept("top"):
                n = self.name("vi name")
                if p.top is not None:
                    self.error("E_DUP_NAME", "top declared twice", n)
                p.top, p.top_tok = n.text, n
            elif self.accept("vi"):
                n = self.name("vi name")
                target = self.target(ir.HOST)
                self.expect("{")
                body = self.items(in_sctl=False)
                self.expect("}")
                p.add_vi(n, target, body)
            else:
                self.error("E_SYNTAX", f"expected a declaration, found {t.text!r}")
        return p

    def items(self, in_sctl: bool, allow_params=False, allow_shift=False):
        b = _BodyBuilder(self)
        while not self.at("}") and self.peek().kind != "eof":
            t = self.peek()
            if self.accept("control") or self.accept("indicator"):
                n = self.name("port name")
                self.expect(":")
                b.add_port(t.text, n, self.type_())
            elif self.accept("param"):
                if not allow_params:
                    self.error("E_SYNTAX", "param is only allowed inside sctl", t)
                n = self.name("param name")
                self.expect(":")
                ty_tok = self.peek()
                if self.type_() != I32:
                    self.error("E_SYNTAX", "run-time parameters are i32", ty_tok)
                b.add_param(n)
            elif self.accept("shift"):
                if not allow_shift:
                    self.error("E_SYNTAX", "shift registers belong to loops", t)
                n = self.name("shift register name")
                self.expect(":")
                ty = self.type_()
                self.expect("=")
                lt = self.peek()
                init = self._coerce(ty, self.literal(), lt)
                b.add_shift(n, ShiftRegister(n.text, ty, init))
            elif self.accept("node"):
                n = self.name("node name")
                self.expect(":")
                if self.accept("sub"):
                    ref = self.name("vi name")
                    target = self.target(ir.INHERIT)
                    b.add_node(n, ("sub", ref), target, {})
                else:
                    prim = self.peek()
                    if prim.kind != "name":
                        self.error("E_SYNTAX", "expected primitive name")
                    self.next()
                    if prim.text not in PRIMITIVES:
                        self.error("E_UNKNOWN_PRIMITIVE", f"unknown primitive {prim.text!r}", prim)
                    attrs = self.attrs()
                    target = self.target(ir.INHERIT)
                    b.add_node(n, ("prim", prim), target, attrs)
            elif self.accept("wire"):
                src, st = self.endpoint()
                self.expect("->")
                dst, dt = self.endpoint()
                b.add_wire(src, dst, st)
            elif t.text in ("for", "while") and t.kind == "name":
                self.next()
                n = self.name("loop name")
                unroll, target_ii = 1, None
                while self.at("unroll") or self.at("ii"):
                    kw = self.next()
                    v = self.int_()
                    if kw.text == "unroll":
                        if v < 1:
                            self.error("E_SYNTAX", "unroll factor must be >= 1", kw)
                        unroll = v
                    else:
                        target_ii = v
                target = self.target(ir.INHERIT)
                self.expect("{")
                body = self.items(in_sctl, allow_shift=True)
                self.expect("}")
                b.add_loop(n, t.text, body, unroll, target_ii, target)
            elif self.accept("sctl"):
                n = self.name("loop name")
                self.expect("clock")
                clk = self.name("clock name")
                self.expect("{")
                body = self.items(True, allow_params=True, allow_shift=True)
                self.expect("}")
                b.add_sctl(n, clk, body)
            elif self.accept("case"):
                n = self.name("case name")
                self.expect(":")
                sel_tok = self.peek()
                sel = self.type_()
                if sel not in (I32, BOOL):
                    self.error("E_SYNTAX", "case selector must be i32 or bool", sel_tok)
                default = None
                if self.accept("default"):
                    lt = self.peek()
                    default = self._coerce(sel, self.literal(), lt)
                target = self.target(ir.INHERIT)
                self.expect("{")
                pane = _BodyBuilder(self)
                branches = []
                while not self.at("}") and self.peek().kind != "eof":
                    bt = self.peek()
                    if self.accept("control") or self.accept("indicator"):
                        pn = self.name("port name")
                        self.expect(":")
                        pane.add_port(bt.text, pn, self.type_())
                    elif self.accept("branch"):
                        lt = self.peek()
                        key = self._coerce(sel, self.literal(), lt)
                        if any(k == key for k, _, _ in branches):
                            self.error("E_DUP_NAME", f"duplicate branch {key!r}", lt)
                        self.expect("{")
                        body = self.items(in_sctl)
                        self.expect("}")
                        if body.controls or body.indicators:
                            self.error("E_SYNTAX", "declare case ports outside the branches", lt)
                        branches.append((key, body, lt))
                    else:
                        self.error("E_SYNTAX", f"expected control, indicator or branch, found {bt.text!r}")
                self.expect("}")
                if default is not None and not any(k == default for k, _, _ in branches):
                    self.error("E_SYNTAX", f"default {default!r} names no branch", n)
                b.add_case(n, sel, default, pane, branches, target)
            else:
                self.error("E_SYNTAX", f"expected an item, found {t.text or 'end of input'!r}")
        return b

    def _coerce(self, t, lit, tok):
        try:
            return coerce(t, lit)
        except (ValueError, TypeError) as e:
            self.error("E_SYNTAX", f"bad literal for {t}: {e}", tok)


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _BodyBuilder:
    """Collects the items of one diagram before sub-VI references resolve."""

    def __init__(self, parser: _Parser):
        self.p = parser
        self.controls: list[Port] = []
        self.indicators: list[Port] = []
        self.shifts: list[ShiftRegister] = []
        self.params: list[str] = []
        self.nodes: list[tuple] = []        # (tok, kind, payload, target, attrs, extra)
        self.wires: dict[Endpoint, list] = {}
        self.wire_order: list[Endpoint] = []
        self.names: set[str] = set()
        self.port_names: dict[str, set] = {"control": set(), "indicator": set()}
        self.driven: set[Endpoint] = set()

    def add_port(self, kind, tok, ty):
        if tok.text in self.port_names[kind]:
            self.p.error("E_DUP_NAME", f"duplicate {kind} {tok.text!r}", tok)
        self.port_names[kind].add(tok.text)
        (self.controls if kind == "control" else self.indicators).append(Port(tok.text, ty))

    def add_param(self, tok):
        self.add_port("control", tok, I32)
        self.params.append(tok.text)

    def add_shift(self, tok, reg):
        for kind in ("control", "indicator"):
            if tok.text in self.port_names[kind]:
                self.p.error("E_DUP_NAME", f"duplicate {kind} {tok.text!r}", tok)
            self.port_names[kind].add(tok.text)
        self.shifts.append(reg)

    def _add(self, tok, kind, payload, target, attrs):
        if tok.text in self.names:
            self.p.error("E_DUP_NAME", f"duplicate node {tok.text!r}", tok)
        self.names.add(tok.text)
        self.nodes.append((tok, kind, payload, target, attrs))

    def add_node(self, tok, what, target, attrs):
        self._add(tok, what[0], what[1], target, attrs)

    def add_loop(self, tok, op, body, unroll, target_ii, target):
        self._add(tok, op, (body, unroll, target_ii), target, {})

    def add_sctl(self, tok, clk, body):
        self._add(tok, "sctl", (body, clk), ir.FABRIC, {})

    def add_case(self, tok, sel, default, pane, branches, target):
        self._add(tok, "case", (sel, default, pane, branches), target, {})

    def add_wire(self, src, dst, tok):
        if dst in self.driven:
            self.p.error("E_MULTI_DRIVER", f"{dst} already has a driver", tok)
        self.driven.add(dst)
        if src not in self.wires:
            self.wires[src] = [tok]
            self.wire_order.append(src)
        self.wires[src].append(dst)

    # --- resolution
    def boundary(self):
        ctrls = [Port(r.name, r.type) for r in self.shifts] + self.controls
        inds = [Port(r.name, r.type) for r in self.shifts] + self.indicators
        return ctrls, inds

    def build(self, res: _ProjectBuilder, pane=None) -> Diagram:
        nodes = [self._build_node(res, *spec) for spec in self.nodes]
        wires = [Wire(src, tuple(v[1:]), self.p.span(v[0])) for src, v in self.wires.items()]
        if pane is None:
            ctrls, inds = self.boundary()
        else:
            ctrls, inds = pane
        return Diagram(tuple(nodes), tuple(wires), tuple(ctrls), tuple(inds))

    def _build_node(self, res, tok, kind, payload, target, attrs):
        p, span = self.p, self.p.span(tok)
        if kind == "prim":
            op = payload.text
            ip = None
            if op == "Ip":
                ip = res.ip_for(attrs.get("name"), tok)
            _check_attrs(p, op, attrs, res, tok)
            try:
                ins, outs = port_names(op, attrs, ip)
            except RioflowError as e:
                p.error(e.code, e.message, tok)
            if ip is not None:
                return Node(tok.text, op, ip.inputs, ip.outputs, target, attrs, None, span)
            return Node(tok.text, op, tuple(Port(n) for n in ins), tuple(Port(n) for n in outs),
                        target, attrs, None, span)
        if kind == "sub":
            return res.sub_node(tok, payload, target)
        if kind in ("for", "while"):
            body, unroll, target_ii = payload
            cls = ir.ForLoop if kind == "for" else ir.WhileLoop
            s = cls(body.build(res), tuple(body.shifts), unroll, target_ii)
            return ir.make_structure_node(tok.text, kind, s, target_hint=target, span=span)
        if kind == "sctl":
            body, clk = payload
            s = ir.TimedLoop(body.build(res), clk.text, tuple(body.params), tuple(body.shifts))
            return ir.make_structure_node(tok.text, ir.SCTL, s, target_hint=target, span=span)
        sel, default, pane, branches = payload
        boundary = pane.boundary()
        cases = tuple((k, b.build(res, boundary)) for k, b, _ in branches)
        s = ir.Case(sel, cases, default)
        return ir.make_structure_node(tok.text, ir.CASE, s, target_hint=target, span=span)


def _check_attrs(p: _Parser, op, attrs, res, tok):
    def need(key, kind):
        v = attrs.get(key)
        ok = {"type": isinstance(v, WireType), "str": isinstance(v, str),
              "int": isinstance(v, int) and not isinstance(v, bool),
              "num": isinstance(v, (int, float)) and not isinstance(v, bool)}[kind]
        if not ok:
            p.error("E_ATTR", f"{op} needs attribute {key} ({kind})", tok)

    if op == "Const":
        if "value" not in attrs:
            p.error("E_ATTR", "Const needs a value", tok)
        if "type" in attrs:
            need("type", "type")
            try:
                coerce(attrs["type"], attrs["value"])
            except (ValueError, TypeError) as e:
                p.error("E_ATTR", f"bad Const value: {e}", tok)
        elif not isinstance(attrs["value"], (bool, int, float)):
            p.error("E_ATTR", "Const with a composite value needs a type", tok)
    elif op == "Convert":
        need("to", "type")
        if attrs.get("mode", "saturate") not in ("saturate", "wrap"):
            p.error("E_ATTR", "Convert mode must be saturate or wrap", tok)
    elif op == "ArrayBuild":
        need("n", "int")
        if attrs["n"] < 0 or attrs["n"] > 4096:
            p.error("E_ATTR", "ArrayBuild n out of range", tok)
        if attrs["n"] == 0:
            need("type", "type")
    elif op == "Biquad":
        for k in ("b0", "b1", "b2", "a1", "a2"):
            need(k, "num")
    elif op == "FileReadPCM":
        need("length", "int")
        if attrs["length"] < 0:
            p.error("E_ATTR", "FileReadPCM length must be >= 0", tok)
    elif op in ("FifoRead", "FifoWrite", "RegRead", "RegWrite"):
        need("channel", "str")
        decl = res.channels.get(attrs["channel"])
        want = "fifo" if op.startswith("Fifo") else "register"
        if decl is None or decl.kind != want:
            p.error("E_UNKNOWN_CHANNEL", f"no {want} channel {attrs['channel']!r}", tok)
        if "timeout" in attrs:
            need("timeout", "int")
    elif op in ("ScanRead", "ScanWrite"):
        need("channel", "str")
        if attrs["channel"] not in res.scan_channels:
            p.error("E_UNKNOWN_CHANNEL", f"no scan channel {attrs['channel']!r}", tok)
        want = "in" if op == "ScanRead" else "out"
        if res.scan_channels[attrs["channel"]].direction != want:
            p.error("E_CHANNEL_DIRECTION", f"{op} needs an {want} scan channel", tok)
    elif op == "Ip":
        need("name", "str")


class _ProjectBuilder:
    def __init__(self, parser: _Parser):
        self.p = parser
        self.clocks: dict[str, int] = {}
        self.channels: dict[str, ChannelDecl] = {}
        self.scan_period = None
        self.scan_channels: dict[str, ScanChannel] = {}
        self.ip_decls: dict[str, IpDecl] = {}
        self.ips: dict = {}
        self.vis: dict[str, tuple] = {}
        self.top = None
        self.top_tok = None
        self.built: dict[str, VIGraph] = {}
        self.panes: dict[str, tuple] = {}

    def add_clock(self, tok, hz):
        if tok.text in self.clocks:
            self.p.error("E_DUP_NAME", f"clock {tok.text!r} declared twice", tok)
        self.clocks[tok.text] = hz

    def add_channel(self, decl, tok):
        if decl.name in self.channels or decl.name in self.scan_channels:
            self.p.error("E_DUP_CHANNEL", f"channel {decl.name!r} declared twice", tok)
        self.channels[decl.name] = decl

    def set_scan_period(self, v, tok):
        if self.scan_period is not None:
            self.p.error("E_DUP_NAME", "scan period declared twice", tok)
        self.scan_period = v

    def add_scan(self, ch, tok):
        if ch.name in self.scan_channels or ch.name in self.channels:
            self.p.error("E_CHANNEL_OWNERSHIP", f"channel {ch.name!r} declared twice", tok)
        self.scan_channels[ch.name] = ch

    def add_ip(self, decl, tok):
        if decl.name in self.ip_decls:
            self.p.error("E_DUP_NAME", f"ip {decl.name!r} declared twice", tok)
        self.ip_decls[decl.name] = decl

    def add_vi(self, tok, target, body):
        if tok.text in self.vis:
            self.p.error("E_DUP_NAME", f"vi {tok.text!r} declared twice", tok)
        self.vis[tok.text] = (tok, target, body)
        self.panes[tok.text] = body.boundary()

    def ip_for(self, name, tok):
        if not isinstance(name, str):
            self.p.error("E_ATTR", "Ip needs attribute name", tok)
        if name not in self.ips:
            self.p.error("E_UNKNOWN_IP", f"no imported IP named {name!r}", tok)
        ip = self.ips[name]
        if getattr(ip.desc, "style", None) != "IPIN":
            self.p.error("E_UNKNOWN_IP", f"{name!r} is not an IPIN block", tok)
        return ip

    def sub_node(self, tok, ref, target):
        if ref.text not in self.panes:
            self.p.error("E_UNRESOLVED_SUBVI", f"no vi named {ref.text!r}", ref)
        ctrls, inds = self.panes[ref.text]
        return Node(tok.text, ir.SUB, tuple(ctrls), tuple(inds), target, {"vi": ref.text}, None,
                    self.p.span(tok))

    def finish(self, file) -> Project:
        if not self.vis:
            raise ParseError("E_SYNTAX", "project declares no vi", span=self.p.span())
        for name, (tok, target, body) in self.vis.items():
            self.built[name] = VIGraph(name, body.build(self), target, self.p.span(tok))
        top = self.top
        if top is None:
            referenced = {n.attrs["vi"] for vi in self.built.values() for n in _all_nodes(vi.diagram)
                          if n.op == ir.SUB}
            roots = [n for n in self.vis if n not in referenced]
            top = roots[0] if roots else next(iter(self.vis))
        elif top not in self.built:
            self.p.error("E_UNRESOLVED_SUBVI", f"top vi {top!r} is not declared", self.top_tok)
        scan = None
        if self.scan_period is not None or self.scan_channels:
            scan = ScanConfig(self.scan_period or 1000, tuple(self.scan_channels.values()))
        proj = Project(dict(self.built), top, tuple(self.channels.values()), scan, dict(self.clocks),
                       tuple(self.ip_decls.values()), dict(self.ips))
        for name, vi in self.built.items():
            diags = ir.validate(vi)
            if diags:
                d = diags[0]
                span = d.span or vi.span
                err = ParseError(d.code, d.message, ref=f"{name}/{d.ref}", span=span)
                err.details["diagnostics"] = diags
                raise err
        return proj


def _all_nodes(d: Diagram):
    for n in d.nodes:
        yield n
        for _, body in ir.structure_bodies(n):
            yield from _all_nodes(body)


def parse(text: str, file: str = "<input>", ips: dict | None = None, ip_loader=None) -> Project:
    """Parse gtext into a validated :class:`Project`.

    ``ips`` maps IP names to imported IPIN primitives; ``ip_loader(decl)``
    is called for ``ip`` declarations not found there.
    """
    try:
        parser = _Parser(text, file)
        builder = parser.project()
        builder.ips.update(ips or {})
        for name, decl in builder.ip_decls.items():
            if name not in builder.ips and ip_loader is not None:
                builder.ips[name] = ip_loader(decl)
        return builder.finish(file)
    except ParseError:
        raise
    except RioflowError as e:
        raise ParseError(e.code, e.message, ref=e.ref, span=e.span or SourceSpan(file, 1, 1)) from None
    except RecursionError:
        raise ParseError("E_SYNTAX", "nesting too deep", span=SourceSpan(file, 1, 1)) from None


def load_project(path) -> Project:
    """Read a ``.gtext`` file, importing any IP descriptors it declares."""
    from .ip import import_ip

    path = Path(path)
    text = path.read_text(encoding="utf-8")
    clocks_holder = {}

    def loader(decl: IpDecl):
        desc = IpDescriptor.load(path.parent / decl.path)
        if desc.name != decl.name:
            raise RioflowError("E_IP_SCHEMA", f"descriptor names {desc.name!r}, declared {decl.name!r}")
        if desc.style == "IPIN":
            return import_ip(desc)
        clocks_holder[decl.name] = desc
        return _ClipPlaceholder(desc)

    return parse(text, str(path), ip_loader=loader)


class _ClipPlaceholder:
    """CLIP descriptors are instantiated per simulation (they carry state)."""

    def __init__(self, desc):
        self.desc = desc


# ------------------------------------------------------------------- format


def _fmt_num(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if math.isinf(x) or math.isnan(x):
        raise ValueError("non-finite literal")
    return repr(float(x))


def _fmt_lit(x) -> str:
    if isinstance(x, tuple):
        return "[" + ", ".join(_fmt_lit(e) for e in x) + "]"
    return _fmt_num(x)


def _fmt_attr(v) -> str:
    if isinstance(v, WireType):
        return str(v)
    if isinstance(v, str):
        if NAME_RE.match(v) and v not in KEYWORDS:
            return v
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        v = tuple(v)
    return _fmt_lit(v)


def _fmt_type_lit(t: WireType, payload) -> str:
    from .types import to_python

    if t.kind == "fixedpoint":
        return _fmt_num(to_python(t, payload))
    if t.kind in ("array", "cluster"):
        fields = [t.elem] * t.length if t.kind == "array" else list(t.fields)
        return "[" + ", ".join(_fmt_type_lit(f, p) for f, p in zip(fields, payload)) + "]"
    return _fmt_num(payload)


def _node_order(d: Diagram) -> list[Node]:
    try:
        return ir.topo_order(d)
    except RioflowError:
        return list(d.nodes)


def _fmt_items(d: Diagram, ind: str, shifts=(), params=(), pane=True) -> list[str]:
    out = []
    shift_names = {r.name for r in shifts}
    for r in shifts:
        out.append(f"{ind}shift {r.name}: {r.type} = {_fmt_type_lit(r.type, r.init)}")
    if pane:
        for c in d.controls:
            if c.name in shift_names:
                continue
            if c.name in params:
                out.append(f"{ind}param {c.name}: i32")
            else:
                out.append(f"{ind}control {c.name}: {c.type}")
        for c in d.indicators:
            if c.name not in shift_names:
                out.append(f"{ind}indicator {c.name}: {c.type}")
    order = _node_order(d)
    rank = {n.id: i for i, n in enumerate(order)}
    for n in order:
        out.extend(_fmt_node(n, ind))
    wires = sorted(((rank.get(w.src.node, -1), w.src, dst) for w in d.wires for dst in w.dsts),
                   key=lambda t: (t[0], t[1], t[2]))
    for _, src, dst in wires:
        out.append(f"{ind}wire {src} -> {dst}")
    return out


def _target_suffix(n: Node) -> str:
    return f" target {n.target_hint}" if n.target_hint in (ir.HOST, ir.FABRIC) else ""


def _fmt_node(n: Node, ind: str) -> list[str]:
    s = n.structure
    if n.op == ir.SUB:
        return [f"{ind}node {n.id}: sub {n.attrs['vi']}{_target_suffix(n)}"]
    if s is None:
        attrs = ""
        if n.attrs:
            attrs = "(" + ", ".join(f"{k}={_fmt_attr(v)}" for k, v in sorted(n.attrs.items())) + ")"
        return [f"{ind}node {n.id}: {n.op}{attrs}{_target_suffix(n)}"]
    inner = ind + "  "
    if n.op == ir.SCTL:
        head = f"{ind}sctl {n.id} clock {s.clock} {{"
        body = _fmt_items(s.body, inner, s.shift_registers, s.params)
    elif n.op in (ir.FOR, ir.WHILE):
        extra = (f" unroll {s.unroll}" if s.unroll != 1 else "") + (
            f" ii {s.target_ii}" if s.target_ii is not None else "")
        head = f"{ind}{n.op} {n.id}{extra}{_target_suffix(n)} {{"
        body = _fmt_items(s.body, inner, s.shift_registers)
    else:
        dflt = f" default {_fmt_type_lit(s.selector, s.default)}" if s.default is not None else ""
        head = f"{ind}case {n.id}: {s.selector}{dflt}{_target_suffix(n)} {{"
        first = s.cases[0][1] if s.cases else Diagram()
        body = [f"{inner}control {c.name}: {c.type}" for c in first.controls]
        body += [f"{inner}indicator {c.name}: {c.type}" for c in first.indicators]
        for key, d in sorted(s.cases, key=lambda kd: (isinstance(kd[0], bool), kd[0])):
            body.append(f"{inner}branch {_fmt_type_lit(s.selector, key)} {{")
            body += _fmt_items(d, inner + "  ", pane=False)
            body.append(f"{inner}}}")
    return [head] + body + [f"{ind}}}"]


def format_project(p: Project) -> str:
    """Canonical text of a project."""
    out = []
    for name, hz in sorted(p.clocks.items()):
        out.append(f"clock {name} {hz} Hz")
    for c in p.channels:
        if c.kind == "fifo":
            dma = f" dma {c.dma.base} {c.dma.per_element} {c.dma.burst}" if c.dma else ""
            out.append(f"channel {c.name} fifo<{c.elem}, {c.capacity}> {c.src} -> {c.dst}{dma}")
        else:
            init = f" = {_fmt_type_lit(c.elem, c.init)}" if c.init is not None else ""
            out.append(f"register {c.name} <{c.elem}> {c.src} -> {c.dst}{init}")
    if p.scan is not None:
        out.append(f"scan period {p.scan.period_us} us")
        for c in p.scan.channels:
            out.append(f"scan {c.direction} {c.name}: {c.type} gain {_fmt_num(float(c.gain))} "
                       f"offset {_fmt_num(float(c.offset))} bits {c.bits}")
    for d in p.ip_decls:
        out.append(f'ip {d.name} "{d.path}"')
    out.append(f"top {p.top}")
    for name in sorted(p.vis):
        vi = p.vis[name]
        out.append("")
        out.append(f"vi {name} target {vi.target} {{")
        out.extend(_fmt_items(vi.diagram, "  "))
        out.append("}")
    return "\n".join(out) + "\n"


def format(p: Project) -> str:  # noqa: A001 - public name mirrors parse
    return format_project(p)
