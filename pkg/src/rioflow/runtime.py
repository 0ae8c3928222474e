"""Host runtime: asynchronous dataflow execution of typed diagrams.

Every wire carries at most one token per diagram execution. A node becomes
ready once each of its inputs holds a token; the scheduler then picks among
ready nodes with a seeded PRNG. Because firing is a pure function of the
input tokens, the outputs do not depend on that choice.

Diagrams are compiled once into a :class:`Program` (slot indices, kernels)
and may be executed many times, which is how loop bodies and timed loops
run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ir
from .errors import RioflowError
from .ip import IpPrimitive
from .primitives import pure_kernel
from .types import Value, coerce, default_payload


@dataclass(frozen=True)
class ExecConfig:
    seed: int = 0
    max_firings: int = 1_000_000
    trace: bool = False
    sctl_iterations: int = 1      # iterations when a timed loop runs as a plain node

    def __post_init__(self):
        if self.max_firings <= 0:
            raise ValueError("max_firings must be > 0")


@dataclass(frozen=True)
class Firing:
    index: int
    node: str
    consumed: tuple
    produced: tuple


@dataclass
class FiringTrace:
    records: list[Firing] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def nodes(self) -> list[str]:
        return [r.node for r in self.records]


@dataclass
class Env:
    """Everything outside the diagram that primitives may touch."""

    channels: dict = field(default_factory=dict)
    io: object = None                  # scanio.IoState
    ips: dict = field(default_factory=dict)
    wait: object = None                # called when a host channel op would block
    base_dir: Path = Path(".")
    fifo_timeout: int = -1             # host-side blocking timeout in ticks
    pcm_override: dict = field(default_factory=dict)   # node id -> path

    @classmethod
    def for_project(cls, p, **kw) -> Env:
        from .comm import create_channels
        from .scanio import IoState

        kw.setdefault("channels", create_channels(p.channels))
        kw.setdefault("ips", dict(p.ips))
        if p.scan is not None:
            kw.setdefault("io", IoState())
        return cls(**kw)


class _Ctx:
    __slots__ = ("rng", "count", "max", "trace")

    def __init__(self, cfg: ExecConfig):
        self.rng = random.Random(cfg.seed)
        self.count = 0
        self.max = cfg.max_firings
        self.trace = FiringTrace() if cfg.trace else None


class _Blocked(Exception):
    """A host channel op cannot complete yet; the scheduler retries it later."""

    def __init__(self, channel, timeout_result, on_timeout=None):
        self.channel = channel
        self.timeout_result = timeout_result
        self.on_timeout = on_timeout


def _runtime_error(e: Exception, ref: str) -> RioflowError:
    if isinstance(e, RioflowError):
        if not e.ref:
            e.ref = ref
        return e
    cause = {ZeroDivisionError: "div_by_zero", OverflowError: "overflow"}.get(type(e), type(e).__name__)
    return RioflowError("E_RUNTIME", str(e), ref=ref, details={"cause": cause})


class Program:
    """A diagram compiled for repeated execution."""

    def __init__(self, d: ir.Diagram, env: Env | None = None, timed: bool = False,
                 cfg: ExecConfig | None = None):
        self.d = d
        self.env = env or Env()
        self.timed = timed
        self.cfg = cfg or ExecConfig()
        self.nodes = list(d.nodes)
        slot: dict[ir.Endpoint, int] = {}
        owner: list[int] = []
        for i, n in enumerate(self.nodes):
            for p in n.in_ports:
                slot[ir.Endpoint(n.id, p.name)] = len(owner)
                owner.append(i)
        for p in d.indicators:
            slot[ir.Endpoint("", p.name)] = len(owner)
            owner.append(-1)
        self.nslots = len(owner)
        self.owner = owner
        self.in_slots = [[slot[ir.Endpoint(n.id, p.name)] for p in n.in_ports] for n in self.nodes]
        self.ind_slots = {p.name: slot[ir.Endpoint("", p.name)] for p in d.indicators}
        fan: dict[ir.Endpoint, list[int]] = {}
        for w in d.wires:
            fan.setdefault(w.src, []).extend(slot[x] for x in w.dsts)
        self.control_fan = [(p.name, fan.get(ir.Endpoint("", p.name), [])) for p in d.controls]
        self.out_fan = [[fan.get(ir.Endpoint(n.id, p.name), []) for p in n.out_ports] for n in self.nodes]
        self.arity = [len(n.in_ports) for n in self.nodes]
        self.sources = [i for i, n in enumerate(self.nodes) if not n.in_ports]
        self.kernels = [self._kernel(n) for n in self.nodes]

    # -- execution
    def run(self, inputs: dict, ctx: _Ctx, prefix: str = "") -> dict:
        slots = [None] * self.nslots
        missing = list(self.arity)
        ready = list(self.sources)
        owner = self.owner

        def deliver(targets, v):
            for s in targets:
                slots[s] = v
                i = owner[s]
                if i >= 0:
                    missing[i] -= 1
                    if missing[i] == 0:
                        ready.append(i)

        for name, targets in self.control_fan:
            deliver(targets, inputs[name])
        rng, trace = ctx.rng, ctx.trace
        nodes, kernels, in_slots, out_fan = self.nodes, self.kernels, self.in_slots, self.out_fan
        blocked: list[int] = []
        waits: dict[int, int] = {}
        env = self.env
        while ready or blocked:
            if not ready:
                # every runnable node waits on a channel: let simulated time pass
                if env.wait is None and env.fifo_timeout < 0:
                    i = blocked[0]
                    raise RioflowError("E_DEADLOCK", "channel operation can never complete",
                                       ref=prefix + nodes[i].id)
                if env.wait is not None:
                    env.wait()
                for i in blocked:
                    waits[i] = waits.get(i, 0) + 1
                ready, blocked = blocked, []
            k = rng.randrange(len(ready)) if len(ready) > 1 else 0
            ready[k], ready[-1] = ready[-1], ready[k]
            i = ready.pop()
            args = [slots[s] for s in in_slots[i]]
            try:
                outs = kernels[i](ctx, prefix, *args)
            except _Blocked as b:
                if 0 <= env.fifo_timeout <= waits.get(i, 0):
                    if b.on_timeout:
                        b.on_timeout()
                    outs = b.timeout_result
                else:
                    blocked.append(i)
                    continue
            except Exception as e:   # surfaces as a diagnostic with the node path
                raise _runtime_error(e, prefix + nodes[i].id) from None
            if blocked:     # progress may unblock parked channel ops
                ready.extend(blocked)
                blocked = []
            ctx.count += 1
            if ctx.count > ctx.max:
                raise RioflowError("E_LIMIT", f"more than {ctx.max} firings", ref=prefix + nodes[i].id)
            if trace is not None:
                n = nodes[i]
                trace.records.append(Firing(len(trace.records), prefix + n.id,
                                            tuple(zip((p.name for p in n.in_ports), args)),
                                            tuple(zip((p.name for p in n.out_ports), outs))))
            for targets, v in zip(out_fan[i], outs):
                deliver(targets, v)
        out = {}
        for name, s in self.ind_slots.items():
            if slots[s] is None:
                waiting = sorted(prefix + nodes[i].id for i in range(len(nodes)) if missing[i] > 0)
                raise RioflowError("E_DEADLOCK", f"indicator {name!r} never received a token",
                                   ref=prefix + name, details={"waiting": waiting})
            out[name] = slots[s]
        return out

    # -- kernels: f(ctx, prefix, *inputs) -> tuple of outputs
    def _kernel(self, n: ir.Node):
        if n.structure is not None:
            return _structure_kernel(n, self.env, self.cfg)
        if n.op == ir.SUB:
            raise RioflowError("E_UNEXPANDED", "expand sub-VIs before running", ref=n.id)
        f = pure_kernel(n)
        if f is not None:
            return lambda ctx, pre, *xs: f(*xs)
        return _effect_kernel(n, self.env, self.timed)


# ------------------------------------------------------------- effect kernels


def _channel(env: Env, n: ir.Node):
    name = n.attrs.get("channel")
    c = env.channels.get(name)
    if c is None:
        raise RioflowError("E_RUNTIME", f"channel {name!r} is not instantiated", ref=n.id,
                           details={"cause": "unknown_channel"})
    return c


def read_pcm(path, length: int) -> tuple:
    """16-bit little-endian mono PCM as floats in [-1, 1), padded/truncated to ``length``."""
    raw = np.fromfile(path, dtype="<i2")
    x = np.zeros(length, dtype=np.float64)
    m = min(length, raw.size)
    x[:m] = raw[:m] / 32768.0
    return tuple(x.tolist())


def _effect_kernel(n: ir.Node, env: Env, timed: bool):
    op, attrs = n.op, n.attrs
    if op == "FifoRead":
        gated = bool(attrs.get("gated"))
        dflt = default_payload(n.out_ports[0].type)

        def fifo_read(ctx, pre, *en):
            if gated and not en[0]:
                return dflt, False
            c = _channel(env, n)
            ok, v = c.try_read()
            if ok:
                return v, True
            if timed:
                c.underruns += 1
                return dflt, False
            raise _Blocked(c, (dflt, False))

        return fifo_read
    if op == "FifoWrite":
        gated = bool(attrs.get("gated"))
        vt = n.in_ports[0].type

        progress: dict[str, int] = {}     # firing prefix -> elements already written

        def fifo_write(ctx, pre, v, *en):
            if gated and not en[0]:
                return (False,)
            c = _channel(env, n)
            items = v if (vt.kind == "array" and c.elem != vt) else (v,)
            if timed:
                ok = True
                for x in items:
                    if not c.try_write(x):
                        c.overflows += 1
                        ok = False
                return (ok,)
            k = progress.pop(pre, 0)
            while k < len(items):
                if not c.try_write(items[k]):
                    progress[pre] = k
                    raise _Blocked(c, (False,), lambda: progress.pop(pre, None))
                k += 1
            return (True,)

        return fifo_write
    if op == "RegRead":
        return lambda ctx, pre: (_channel(env, n).read(),)
    if op == "RegWrite":
        def reg_write(ctx, pre, v):
            _channel(env, n).write(v)
            return ()
        return reg_write
    if op == "ScanRead":
        def scan_read(ctx, pre):
            if env.io is None:
                raise RioflowError("E_RUNTIME", "no scan engine configured", details={"cause": "no_scan"})
            return (env.io.read(attrs["channel"]),)
        return scan_read
    if op == "ScanWrite":
        def scan_write(ctx, pre, v):
            if env.io is None:
                raise RioflowError("E_RUNTIME", "no scan engine configured", details={"cause": "no_scan"})
            env.io.write_output(attrs["channel"], v)
            return ()
        return scan_write
    if op == "FileReadPCM":
        length = n.out_ports[0].type.length
        cache = []

        def file_read(ctx, pre):
            if not cache:
                path = env.pcm_override.get(n.id) or Path(env.base_dir) / str(attrs.get("path", ""))
                try:
                    cache.append(read_pcm(path, length))
                except OSError as e:
                    raise RioflowError("E_RUNTIME", str(e), details={"cause": "file"}) from None
            return (cache[0],)
        return file_read
    if op == "Ip":
        ip = env.ips.get(attrs.get("name"))
        if not isinstance(ip, IpPrimitive):
            raise RioflowError("E_UNKNOWN_IP", f"no IPIN named {attrs.get('name')!r}", ref=n.id)
        k = ip.host_kernel()
        return lambda ctx, pre, *xs: k(*xs)
    raise RioflowError("E_UNKNOWN_PRIMITIVE", f"no host kernel for {op!r}", ref=n.id)


# ---------------------------------------------------------------- structures


def _shift_init(s) -> dict:
    return {r.name: r.init if r.init is not None else default_payload(r.type) for r in s.shift_registers}


def _loop_kernel(n: ir.Node, env: Env, cfg: ExecConfig):
    s = n.structure
    body = Program(s.body, env, cfg=cfg)
    shift = [r.name for r in s.shift_registers]
    body_in = {p.name for p in s.body.controls}
    pass_names = [p.name for p in n.in_ports][1 if n.op == ir.FOR else 0:]
    other_out = [p.name for p in n.out_ports if p.name not in shift]
    defaults = {p.name: default_payload(p.type) for p in n.out_ports}
    has_i = "i" in body_in

    def loop(ctx, pre, *xs):
        passed = dict(zip(pass_names, xs[1:] if n.op == ir.FOR else xs))
        regs = _shift_init(s)
        last = {k: defaults[k] for k in other_out}
        it = 0
        while True:
            if n.op == ir.FOR and it >= xs[0]:
                break
            if it > ctx.max:
                raise RioflowError("E_LIMIT", f"while loop exceeded {ctx.max} iterations", ref=pre + n.id)
            inputs = dict(passed)
            inputs.update(regs)
            if has_i:
                inputs["i"] = it
            out = body.run(inputs, ctx, f"{pre}{n.id}[{it}]/")
            regs = {k: out[k] for k in shift}
            last = {k: out[k] for k in other_out}
            it += 1
            if n.op == ir.WHILE and out["stop"]:
                break
        return tuple(regs[p.name] if p.name in regs else last[p.name] for p in n.out_ports)

    return loop


def _case_kernel(n: ir.Node, env: Env, cfg: ExecConfig):
    s = n.structure
    progs: dict = {}

    def case(ctx, pre, sel, *xs):
        key, body = s.branch(sel)
        if body is None:
            raise RioflowError("E_RUNTIME", f"no case for selector {sel!r}", details={"cause": "no_case"})
        if key not in progs:
            progs[key] = Program(body, env, cfg=cfg)
        prog = progs[key]
        inputs = dict(zip((p.name for p in n.in_ports[1:]), xs))
        out = prog.run(inputs, ctx, f"{pre}{n.id}[{_key_str(key)}]/")
        return tuple(out[p.name] for p in n.out_ports)

    return case


def _key_str(k) -> str:
    return str(k).lower() if isinstance(k, bool) else str(k)


class TimedLoopRunner:
    """Host-semantics execution of a timed loop, one iteration per :meth:`step`.

    Run-time parameters and other inputs are latched at iteration boundaries
    (see :meth:`set_inputs`); shift registers carry between iterations.
    """

    def __init__(self, n: ir.Node, env: Env | None = None, cfg: ExecConfig | None = None):
        self.node = n
        self.s = n.structure
        self.cfg = cfg or ExecConfig()
        self.body = Program(self.s.body, env, timed=True, cfg=self.cfg)
        self.regs = _shift_init(self.s)
        self.inputs = {p.name: default_payload(p.type) for p in n.in_ports}
        self.outputs = {p.name: default_payload(p.type) for p in n.out_ports}
        self.iteration = 0
        self.ctx = _Ctx(self.cfg)

    def set_inputs(self, values: dict):
        self.inputs.update(values)

    def step(self, ctx: _Ctx | None = None, prefix: str = "") -> dict:
        if ctx is None:
            ctx = self.ctx
            ctx.max = ctx.count + self.cfg.max_firings   # standalone: budget per iteration
        inputs = dict(self.inputs)
        inputs.update(self.regs)
        out = self.body.run(inputs, ctx, f"{prefix}{self.node.id}[{self.iteration}]/")
        self.regs = {k: out[k] for k in self.regs}
        self.outputs = {p.name: out[p.name] for p in self.node.out_ports}
        self.iteration += 1
        return self.outputs


def _sctl_kernel(n: ir.Node, env: Env, cfg: ExecConfig):
    def sctl(ctx, pre, *xs):
        r = TimedLoopRunner(n, env, cfg)
        r.set_inputs(dict(zip((p.name for p in n.in_ports), xs)))
        for _ in range(cfg.sctl_iterations):
            r.step(ctx, pre)
        return tuple(r.outputs[p.name] for p in n.out_ports)

    return sctl


def _structure_kernel(n: ir.Node, env: Env, cfg: ExecConfig):
    if n.op in (ir.FOR, ir.WHILE):
        return _loop_kernel(n, env, cfg)
    if n.op == ir.CASE:
        return _case_kernel(n, env, cfg)
    return _sctl_kernel(n, env, cfg)


# ------------------------------------------------------------------ front door


def _is_typed(d: ir.Diagram) -> bool:
    return all(p.type is not None for n in d.nodes for p in n.in_ports + n.out_ports)


def _payload(port: ir.Port, v):
    if isinstance(v, Value):
        if v.type != port.type:
            raise RioflowError("E_TYPE", f"control {port.name} is {port.type}, got {v.type}", ref=port.name)
        return v.payload
    # plain Python values are literals: fixedpoint takes real numbers
    return coerce(port.type, v)


def run(d: ir.Diagram, inputs: dict | None = None, cfg: ExecConfig | None = None, env: Env | None = None,
        program: Program | None = None):
    """Execute a diagram once. Returns ``(outputs, trace)`` with outputs as Values.

    Untyped diagrams are typed first. Pass a prebuilt ``program`` to skip
    compilation when running the same diagram many times.
    """
    cfg = cfg or ExecConfig()
    if program is None:
        if not _is_typed(d):
            from .elaborate import TypeEnv, infer_types

            d = infer_types(d, TypeEnv({}, dict(env.ips) if env else {}))
        program = Program(d, env, cfg=cfg)
    d = program.d
    inputs = inputs or {}
    payloads = {}
    for p in d.controls:
        if p.name not in inputs:
            raise RioflowError("E_MISSING_INPUT", f"no value for control {p.name!r}", ref=p.name)
        payloads[p.name] = _payload(p, inputs[p.name])
    ctx = _Ctx(cfg)
    out = program.run(payloads, ctx)
    return ({p.name: Value(p.type, out[p.name]) for p in d.indicators},
            ctx.trace if ctx.trace is not None else FiringTrace())


def eval_structure(n: ir.Node, bindings: dict, cfg: ExecConfig | None = None, env: Env | None = None) -> dict:
    """Evaluate one structure node on in-port payloads; returns out-port payloads."""
    cfg = cfg or ExecConfig()
    k = _structure_kernel(n, env or Env(), cfg)
    outs = k(_Ctx(cfg), "", *(bindings[p.name] for p in n.in_ports))
    return dict(zip((p.name for p in n.out_ports), outs))
