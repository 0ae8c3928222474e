"""FIFO and register channels between host and fabric, with a DMA model.

Time is counted in integer ticks. A channel's ``now`` is advanced by whoever
drives the simulation (see :meth:`Fifo.advance`); on the host side without a
simulator, "ticks" are simply calls to the wait callback.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .errors import RioflowError
from .types import WireType, Value, default_payload, payload_ok

HOST, FABRIC = "host", "fabric"


class Status(Enum):
    OK = "ok"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class DmaModel:
    """Transfer latency of a boundary-crossing FIFO, in ticks."""

    base: int = 8
    per_element: int = 1
    burst: int = 4

    def __post_init__(self):
        if self.base < 0 or self.per_element < 1 or self.burst < 1:
            raise ValueError("DMA model needs base >= 0, per_element >= 1, burst >= 1")


DEFAULT_DMA = DmaModel()


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    kind: str                      # "fifo" | "register"
    elem: WireType
    capacity: int = 1
    src: str = HOST
    dst: str = FABRIC
    dma: DmaModel | None = None    # override; None -> default for boundary FIFOs
    init: Any = None
    span: Any = field(default=None, compare=False)

    @property
    def crosses_boundary(self) -> bool:
        return self.src != self.dst


def dma_transfer_schedule(n: int, model: DmaModel = DEFAULT_DMA) -> list[int]:
    """Arrival tick offsets of ``n`` contiguously available elements."""
    b, p, burst = model.base, model.per_element, model.burst
    return [b + math.ceil((i + 1) / burst) * burst * p for i in range(n)]


class Fifo:
    """Bounded single-producer/single-consumer queue.

    For boundary-crossing FIFOs each element carries an arrival tick; it is
    readable at the far side only once ``now >= arrival``. Capacity bounds
    buffered plus in-flight elements, so the writer sees "full" while a DMA
    transfer is still in progress.
    """

    kind = "fifo"

    def __init__(self, name: str, elem: WireType, capacity: int, dma: DmaModel | None = None):
        if capacity < 1:
            raise ValueError("fifo capacity must be >= 1")
        self.name, self.elem, self.capacity, self.dma = name, elem, capacity, dma
        self.now = 0
        self._q: deque = deque()   # (arrival_tick, payload)
        self._lock = threading.Lock()
        self._run_start = None
        self._run_index = 0
        self._last_arrival = -1
        self.writes = self.reads = self.overflows = self.underruns = 0

    # -- time
    def advance(self, ticks: int = 1):
        self.now += ticks

    # -- occupancy
    @property
    def in_flight(self) -> int:
        with self._lock:
            return sum(1 for a, _ in self._q if a > self.now)

    @property
    def occupancy(self) -> int:
        """Elements readable at the far side right now."""
        with self._lock:
            return sum(1 for a, _ in self._q if a <= self.now)

    def __len__(self):
        return len(self._q)

    def space(self) -> int:
        return self.capacity - len(self._q)

    def can_read(self) -> bool:
        q = self._q
        return bool(q) and q[0][0] <= self.now

    # -- non-blocking primitives
    def _arrival(self) -> int:
        if self.dma is None:
            return self.now
        m = self.dma
        if self._run_start is not None:
            i = self._run_index
            a = self._run_start + m.base + math.ceil((i + 1) / m.burst) * m.burst * m.per_element
            if a > self.now:
                self._run_index += 1
                return max(a, self._last_arrival)
        # engine idle: a new contiguous run starts now
        self._run_start, self._run_index = self.now, 1
        return max(self.now + m.base + m.burst * m.per_element, self._last_arrival)

    def try_write(self, payload) -> bool:
        with self._lock:
            if len(self._q) >= self.capacity:
                return False
            a = self._arrival()
            self._last_arrival = a
            self._q.append((a, payload))
            self.writes += 1
            return True

    def try_read(self):
        with self._lock:
            q = self._q
            if q and q[0][0] <= self.now:
                self.reads += 1
                return True, q.popleft()[1]
            return False, None

    # -- blocking forms (timeout in ticks; 0 = poll, negative = forever)
    def write(self, payload, timeout: int = -1, wait: Callable[[], None] | None = None) -> Status:
        waited = 0
        while not self.try_write(payload):
            if timeout >= 0 and waited >= timeout:
                return Status.TIMEOUT
            if wait is None:
                if timeout < 0:
                    raise RioflowError("E_DEADLOCK", f"write to full fifo {self.name!r} can never complete",
                                       ref=self.name)
                return Status.TIMEOUT
            wait()
            waited += 1
        return Status.OK

    def read(self, timeout: int = -1, wait: Callable[[], None] | None = None):
        waited = 0
        while True:
            ok, v = self.try_read()
            if ok:
                return Status.OK, v
            if timeout >= 0 and waited >= timeout:
                return Status.TIMEOUT, None
            if wait is None:
                if timeout < 0:
                    raise RioflowError("E_DEADLOCK", f"read from empty fifo {self.name!r} can never complete",
                                       ref=self.name)
                return Status.TIMEOUT, None
            wait()
            waited += 1


class Register:
    """Latest-value channel; every read sees one whole written element."""

    kind = "register"

    def __init__(self, name: str, elem: WireType, init=None):
        self.name, self.elem = name, elem
        self._value = default_payload(elem) if init is None else init
        self._seq = 0
        self._lock = threading.Lock()
        self.writes = self.reads = 0

    def write(self, payload):
        with self._lock:
            self._value = payload
            self._seq += 1
            self.writes += 1

    def read(self):
        with self._lock:
            self.reads += 1
            return self._value

    def read_versioned(self):
        with self._lock:
            return self._seq, self._value


def create_channel(decl: ChannelDecl, existing: dict | None = None):
    """Instantiate a declared channel; boundary FIFOs get a DMA model."""
    if existing is not None and decl.name in existing:
        raise RioflowError("E_DUP_CHANNEL", f"channel {decl.name!r} declared twice", ref=decl.name,
                           span=decl.span)
    if decl.kind == "register":
        ch = Register(decl.name, decl.elem, decl.init)
    else:
        dma = (decl.dma or DEFAULT_DMA) if decl.crosses_boundary else None
        ch = Fifo(decl.name, decl.elem, decl.capacity, dma)
    if existing is not None:
        existing[decl.name] = ch
    return ch


def create_channels(decls, dma_overrides: dict | None = None) -> dict:
    """Channels for a project; ``dma_overrides`` maps name -> DmaModel/dict."""
    out: dict = {}
    for d in decls:
        if dma_overrides and d.name in dma_overrides:
            o = dma_overrides[d.name]
            d = ChannelDecl(d.name, d.kind, d.elem, d.capacity, d.src, d.dst,
                            o if isinstance(o, DmaModel) else DmaModel(**o), d.init, d.span)
        create_channel(d, out)
    return out


def _check(c, v: Value):
    if v.type != c.elem:
        raise RioflowError("E_TYPE", f"channel {c.name!r} carries {c.elem}, got {v.type}", ref=c.name)


def fifo_write(c: Fifo, v: Value, timeout: int = 0, wait=None) -> Status:
    _check(c, v)
    return c.write(v.payload, timeout, wait)


def fifo_read(c: Fifo, timeout: int = 0, wait=None) -> tuple[Status, Value | None]:
    st, p = c.read(timeout, wait)
    return st, (Value(c.elem, p) if st is Status.OK else None)


def reg_write(c: Register, v: Value):
    _check(c, v)
    c.write(v.payload)


def reg_read(c: Register) -> Value:
    p = c.read()
    assert payload_ok(c.elem, p)
    return Value(c.elem, p)
