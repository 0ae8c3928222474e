"""Scan engine and virtual analog I/O.

The scan engine reads every input channel in one atomic step, publishes an
immutable snapshot into the global map, then drives the output channels from
the map. Host-side readers always see a whole snapshot because publication
is a single reference swap.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

from . import fixedpoint as fx
from .errors import RioflowError
from .types import F64, I32, Value, WireType

IN, OUT = "in", "out"


@dataclass(frozen=True)
class ScanChannel:
    name: str
    direction: str
    type: WireType = I32
    gain: float = 1.0
    offset: float = 0.0
    bits: int = 16
    span: object = field(default=None, compare=False)


@dataclass(frozen=True)
class ScanConfig:
    period_us: int
    channels: tuple[ScanChannel, ...] = ()

    def __post_init__(self):
        if self.period_us <= 0:
            raise ValueError("scan period must be > 0")
        names = [c.name for c in self.channels]
        if len(names) != len(set(names)):
            raise ValueError("scan channel names must be unique")

    def channel(self, name) -> ScanChannel:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class ScanSnapshot:
    index: int
    values: Mapping[str, Value]
    raw: Mapping[str, int]
    period_us: int

    @property
    def timestamp_us(self) -> int:
        return self.index * self.period_us


def eng_convert(raw: int, gain: float, offset: float) -> float:
    return raw * gain + offset


def eng_to_raw(eng: float, gain: float, offset: float, bits: int = 16) -> int:
    """Inverse of :func:`eng_convert`: round to nearest code, saturate to range."""
    x = (eng - offset) / gain
    lo, hi = fx.int_range(bits)
    if x != x:
        return 0
    if x >= hi:
        return hi
    if x <= lo:
        return lo
    return round(x)


# ------------------------------------------------------------------ sources


def ramp(start: int = 0, step: int = 1, bits: int = 16) -> Callable[[int], int]:
    return lambda k: fx.wrap(start + step * k, bits)


def sine(amplitude: float, freq_hz: float, period_us: int, gain: float, offset: float = 0.0,
         bits: int = 16) -> Callable[[int], int]:
    """Raw codes of ``amplitude * sin(2 pi f t)`` engineering units sampled per scan."""
    dt = period_us * 1e-6
    return lambda k: eng_to_raw(amplitude * math.sin(2 * math.pi * freq_hz * k * dt), gain, offset, bits)


class StepSource:
    """Piecewise-constant source from ``(tick, raw)`` change points."""

    def __init__(self, points):
        self.points = sorted(points)

    def __call__(self, k: int) -> int:
        v = 0
        for t, raw in self.points:
            if t > k:
                break
            v = raw
        return v


def load_stimulus_csv(path) -> dict[str, StepSource]:
    """Read ``tick,channel,raw_value`` rows into per-channel sources."""
    pts: dict[str, list] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pts.setdefault(row["channel"], []).append((int(row["tick"]), int(row["raw_value"])))
    return {name: StepSource(p) for name, p in pts.items()}


def write_output_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tick", "channel", "value"])
        for r in rows:
            w.writerow(r)


# ------------------------------------------------------------------ engine


class IoState:
    """Simulated I/O modules plus the global memory map."""

    def __init__(self, sources: Mapping[str, Callable[[int], int]] | None = None):
        self.sources = dict(sources or {})
        self.index = -1
        self.outputs: dict[str, float] = {}
        self.output_log: list[tuple[int, str, float]] = []
        self.events: list[tuple[int, str, str]] = []
        self._latch = threading.Lock()
        self._snapshot: ScanSnapshot | None = None

    def latest(self) -> ScanSnapshot | None:
        return self._snapshot

    def write_output(self, name: str, eng: float):
        self.outputs[name] = float(eng)

    def read(self, name: str) -> float:
        snap = self._snapshot
        if snap is None or name not in snap.values:
            raise RioflowError("E_SCAN", f"no scanned value for {name!r}", ref=name)
        return snap.values[name].payload


def scan_tick(cfg: ScanConfig, io: IoState, elapsed_us: float = 0.0) -> ScanSnapshot:
    """Run one scan cycle and return its snapshot."""
    with io._latch:
        k = io.index + 1
        raw = {}
        for c in cfg.channels:
            if c.direction == IN:
                src = io.sources.get(c.name)
                raw[c.name] = src(k) if src is not None else 0
    values = {name: Value(F64, eng_convert(r, cfg.channel(name).gain, cfg.channel(name).offset))
              for name, r in raw.items()}
    snap = ScanSnapshot(k, MappingProxyType(values), MappingProxyType(raw), cfg.period_us)
    io._snapshot = snap
    io.index = k
    for c in cfg.channels:
        if c.direction == OUT:
            code = eng_to_raw(io.outputs.get(c.name, c.offset), c.gain, c.offset, c.bits)
            io.output_log.append((k, c.name, eng_convert(code, c.gain, c.offset)))
    if elapsed_us > cfg.period_us:
        io.events.append((k, "E_SCAN_OVERRUN", f"{elapsed_us} us > {cfg.period_us} us"))
    return snap


# -------------------------------------------------------------- virtual AO


class VirtualAO:
    """DAC bound to a fabric clock, consuming one sample every ``ticks_per_sample`` ticks.

    Emission ticks lie on the grid ``k * ticks_per_sample``. The device arms
    at the first grid tick where its buffer holds a sample; from then on an
    empty buffer at an emission tick is an underrun and the last sample is
    held.
    """

    def __init__(self, name: str, sample_rate: float, clock_hz: float, buffer):
        tps = round(clock_hz / sample_rate)
        if tps < 1:
            raise RioflowError("E_DAC_RATE", f"sample rate {sample_rate} exceeds clock {clock_hz}", ref=name)
        self.name, self.sample_rate, self.clock_hz = name, sample_rate, clock_hz
        self.ticks_per_sample = tps
        self.buffer = buffer
        self.armed = False
        self.last = 0
        self.underruns = 0
        self.log: list[tuple[int, object]] = []
        self.events: list[tuple[int, str]] = []


def ticks_per_sample(clock_hz: float, sample_rate: float) -> int:
    return round(clock_hz / sample_rate)


def dac_emit(ao: VirtualAO, tick: int):
    """Emit at ``tick`` if it is an emission tick; returns ``(tick, sample)`` or None."""
    if tick % ao.ticks_per_sample:
        return None
    if not ao.armed:
        if not ao.buffer.can_read():
            return None
        ao.armed = True
    ok, v = ao.buffer.try_read()
    if ok:
        ao.last = v
    else:
        ao.underruns += 1
        ao.events.append((tick, "E_UNDERRUN"))
    ao.log.append((tick, ao.last))
    return tick, ao.last


def jitter(ao: VirtualAO) -> list[int]:
    """Deviation of every emission interval from the nominal period."""
    ticks = [t for t, _ in ao.log]
    return [b - a - ao.ticks_per_sample for a, b in zip(ticks, ticks[1:])]
