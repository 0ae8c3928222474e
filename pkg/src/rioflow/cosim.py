"""Whole-project execution: host program plus fabric on one tick grid.

Two modes share the same driver:

``cosim``
    timed loops are compiled to netlists and simulated cycle-accurately;
    boundary FIFOs carry their DMA latency.
``host``
    the development flow: timed-loop bodies run under host semantics, one
    iteration per tick of their clock, and channels have no transfer latency.

The host program is treated as infinitely fast. When one of its channel
operations would block, simulated time advances by one grid tick, so the
fabric (and any device) can make progress.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from . import ir
from .comm import Fifo, create_channels
from .elaborate import DepthTable, TypeEnv, elaborate
from .errors import RioflowError
from .fabric import OUTPUT, PARAM, SHIFT, INPUT, Simulator, TickTrace, compile_sctl
from .ip import CLIP, import_ip
from .runtime import Env, ExecConfig, FiringTrace, Program, TimedLoopRunner, _Ctx, _payload
from .scanio import IoState, VirtualAO, scan_tick
from .types import Value, default_payload

COSIM, HOST = "cosim", "host"


class HostLoopEngine:
    """A timed loop run by the host runtime but clocked like a netlist engine."""

    def __init__(self, node: ir.Node, hz: int, env: Env, cfg: ExecConfig):
        self.name = node.id
        self.hz = hz
        self.body = node.structure.body
        self.runner = TimedLoopRunner(node, env, cfg)
        self.sim = None
        s = node.structure
        shift = [r.name for r in s.shift_registers]
        ins = [p.name for p in node.in_ports]
        outs = [p.name for p in node.out_ports if p.name not in shift]
        self.kinds = ([SHIFT] * len(shift) + [PARAM if n in s.params else INPUT for n in ins]
                      + [OUTPUT] * len(outs))
        self.reg_names = shift + ins + outs
        self._shift, self._ins, self._outs = shift, ins, outs
        self.latched = [i for i, k in enumerate(self.kinds) if k in (SHIFT, OUTPUT)]
        self.ticks = 0
        self._sync()

    def _sync(self):
        r = self.runner
        self.R = ([r.regs[n] for n in self._shift] + [r.inputs[n] for n in self._ins]
                  + [r.outputs[n] for n in self._outs])

    def set_input(self, name, value):
        self.runner.set_inputs({name: value})
        self._sync()

    def tick(self):
        self.runner.step()
        self.ticks += 1
        self._sync()

    @property
    def firings(self) -> int:
        return self.runner.ctx.count


class ScanDevice:
    """Scan engine as a clocked block: one scan per ``period_us``."""

    def __init__(self, cfg, io: IoState):
        if 1_000_000 % cfg.period_us:
            raise RioflowError("E_SCAN_PERIOD", f"scan period {cfg.period_us} us does not divide one second")
        self.name = "scan"
        self.cfg, self.io = cfg, io
        self.clock_hz = 1_000_000 // cfg.period_us

    def fire(self, k):
        scan_tick(self.cfg, self.io)


@dataclass
class RunResult:
    mode: str
    outputs: dict
    trace: TickTrace
    firing_trace: FiringTrace
    firings: int
    channels: dict
    devices: list = field(default_factory=list)
    clips: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    seed: int = 0

    def summary(self) -> dict:
        dacs = [d for d in self.devices if isinstance(d, VirtualAO)]
        fifos = {n: c for n, c in sorted(self.channels.items()) if isinstance(c, Fifo)}
        return {
            "mode": self.mode,
            "seed": self.seed,
            "ticks": self.trace.ticks,
            "firings": self.firings,
            "underruns": sum(d.underruns for d in dacs),
            "overflows": sum(c.overflows for c in fifos.values()),
            "channels": {n: {"writes": c.writes, "reads": c.reads} for n, c in sorted(self.channels.items())},
            "outputs": {k: v.to_python() for k, v in sorted(self.outputs.items())},
            "events": len(self.trace.events),
            # register values seen by the last tick, before its latch
            "final_registers": dict(sorted(self.trace.records[-1].registers.items())) if self.trace.records else {},
        }


def _clips(p, clocks):
    out = []
    for name, x in sorted(p.ips.items()):
        desc = getattr(x, "desc", None)
        if desc is not None and desc.style == CLIP:
            out.append(import_ip(desc, clocks))
    return out


def _with_clocks(p, clocks: dict | None):
    if not clocks:
        return p
    merged = dict(p.clocks)
    merged.update({k: int(v) for k, v in clocks.items()})
    return dataclasses.replace(p, clocks=merged)


def cosimulate(p, *, mode: str = COSIM, inputs: dict | None = None, nticks: int = 0, seed: int = 0,
               table: DepthTable | None = None, clocks: dict | None = None, dma: dict | None = None,
               devices=(), record: bool = True, stimuli: dict | None = None, io_sources: dict | None = None,
               max_firings: int = 10_000_000, base_dir=".", pcm_override: dict | None = None,
               trace_firings: bool = False, until=None) -> RunResult:
    """Run a project for ``nticks`` grid ticks.

    A host program still blocked at ``nticks`` is an E_LIMIT error.
    ``until(sim)`` may end the run early once the host is done.
    ``devices`` is a list of dicts ``{"kind": "dac", "name", "channel", "rate", "clock"}``.
    """
    if mode not in (COSIM, HOST):
        raise ValueError(f"unknown mode {mode!r}")
    if nticks < 0:
        raise ValueError("nticks must be >= 0")
    p = _with_clocks(p, clocks)
    table = table or DepthTable()
    flat, plan, reports = elaborate(p, table)
    for r in reports:
        r.raise_for_errors()
    cfg = ExecConfig(seed=seed, max_firings=max_firings, trace=trace_firings)
    channels = create_channels(flat.channels, dma)
    if mode == HOST:
        for c in channels.values():
            if isinstance(c, Fifo):
                c.dma = None
    io = IoState(io_sources) if flat.scan is not None else None
    env = Env(channels, io, dict(flat.ips), None, Path(base_dir), -1, dict(pcm_override or {}))

    if mode == COSIM:
        tenv = TypeEnv.of(flat)
        nets = [compile_sctl(fl.node, table, fl.clock_hz, tenv) for fl in plan.fabric_loops]
        engines = []
    else:
        nets = []
        engines = [HostLoopEngine(fl.node, fl.clock_hz, env, cfg) for fl in plan.fabric_loops]
    clock_hz = {k: int(v) for k, v in flat.clocks.items()}
    devs = []
    for d in devices:
        if d.get("kind", "dac") != "dac":
            raise RioflowError("E_CONFIG", f"unknown device kind {d.get('kind')!r}")
        hz = clock_hz.get(d.get("clock"), next(iter(clock_hz.values()), 40_000_000))
        ch = channels.get(d["channel"])
        if not isinstance(ch, Fifo):
            raise RioflowError("E_CONFIG", f"device {d.get('name')} needs a fifo channel", ref=str(d["channel"]))
        devs.append(VirtualAO(d.get("name", "ao"), float(d["rate"]), hz, ch))
    if io is not None:
        devs.append(ScanDevice(flat.scan, io))
        scan_tick(flat.scan, io)        # the host sees a first snapshot before it starts
    clips = _clips(flat, clock_hz)
    sim = Simulator(nets, channels, clips, devs, dict(flat.ips), record, stimuli, engines)

    # top-level controls feeding timed loops become their input registers
    inputs = dict(inputs or {})
    top = flat.top_vi.diagram
    payloads = {}
    for c in top.controls:
        if c.name not in inputs:
            raise RioflowError("E_MISSING_INPUT", f"no value for control {c.name!r}", ref=c.name)
        payloads[c.name] = _payload(c, inputs[c.name])
    for (loop, port), ctl in plan.fabric_inputs.items():
        sim.engine(loop).set_input(port, payloads[ctl])

    active = bool(sim.engines or sim.clips or sim.devices)

    def wait():
        if not active:
            raise RioflowError("E_DEADLOCK", "host blocked on a channel with nothing on the other side")
        if sim.tick >= nticks:
            raise RioflowError("E_LIMIT", f"host still blocked after {nticks} ticks")
        sim.step()

    env.wait = wait
    ctx = _Ctx(cfg)
    host_out = Program(plan.host, env, cfg=cfg).run({c.name: payloads[c.name] for c in plan.host.controls}, ctx)
    while sim.tick < nticks and not (until and until(sim)):
        sim.step()
    trace = sim.run(0)

    outputs = {}
    types = {i.name: i.type for i in plan.indicators}
    for name, v in host_out.items():
        outputs[name] = Value(types[name], v)
    for ind, (loop, port) in plan.fabric_outputs.items():
        e = sim.engine(loop)
        outputs[ind] = Value(types[ind], e.R[e.reg_names.index(port)])
    for name in types:
        outputs.setdefault(name, Value(types[name], default_payload(types[name])))
    firings = ctx.count + sum(getattr(e, "firings", 0) for e in sim.engines)
    return RunResult(mode, outputs, trace, ctx.trace or FiringTrace(), firings, channels, devs, clips, reports,
                     seed)
