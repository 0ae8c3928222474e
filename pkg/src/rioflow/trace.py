"""Waveform (VCD) and CSV export of tick traces, plus atomic file writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path

_UNITS = (("s", 1), ("ms", 10**3), ("us", 10**6), ("ns", 10**9), ("ps", 10**12), ("fs", 10**15))


def atomic_write(path, data: str | bytes):
    """Write to a temp file next to ``path`` then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def timescale(grid_hz: int) -> tuple[str, int]:
    """Coarsest VCD time unit in which one grid tick is a whole number."""
    for unit, per_s in _UNITS:
        step = Fraction(per_s, grid_hz)
        if step.denominator == 1:
            return unit, int(step)
    return "fs", max(1, round(10**15 / grid_hz))


def _signals(trace) -> list[str]:
    names = set()
    for r in trace.records:
        names.update(r.registers)
        names.update(r.pins)
    return sorted(names)


def _vcd_value(v, code: str, width: int) -> str | None:
    if isinstance(v, bool):
        return f"{int(v)}{code}"
    if isinstance(v, int):
        return f"b{v & ((1 << width) - 1):b} {code}"
    if isinstance(v, float):
        return f"r{v!r} {code}"
    return None


def _vcd_var(v, code: str, name: str, width: int) -> str | None:
    if isinstance(v, bool):
        return f"$var wire 1 {code} {name} $end"
    if isinstance(v, int):
        return f"$var wire {width} {code} {name} $end"
    if isinstance(v, float):
        return f"$var real 64 {code} {name} $end"
    return None


def _ident(i: int) -> str:
    chars = [chr(c) for c in range(33, 127)]
    s = ""
    i += 1
    while i:
        i, r = divmod(i - 1, len(chars))
        s = chars[r] + s
    return s


def to_vcd(trace) -> str:
    """Value-change dump of register values (during each tick) and CLIP pins.

    Non-scalar values (arrays, clusters) are not dumped.
    """
    unit, step = timescale(trace.grid_hz or 1)
    names = _signals(trace)
    first, width = {}, {}
    for r in trace.records:
        for k in names:
            v = r.registers.get(k, r.pins.get(k))
            if v is None:
                continue
            first.setdefault(k, v)
            if isinstance(v, int) and not isinstance(v, bool):
                width[k] = max(width.get(k, 32), v.bit_length() + 1)
    codes, header = {}, []
    for i, k in enumerate(names):
        decl = _vcd_var(first.get(k), _ident(i), k.replace(" ", "_"), width.get(k, 32))
        if decl is not None:
            codes[k] = _ident(i)
            header.append(decl)
    out = io.StringIO()
    out.write("$version rioflow $end\n")
    out.write(f"$timescale 1{unit} $end\n$scope module top $end\n")
    for h in header:
        out.write(h + "\n")
    out.write("$upscope $end\n$enddefinitions $end\n")
    last = {}
    for r in trace.records:
        changes = []
        for k, code in codes.items():
            v = r.registers.get(k, r.pins.get(k))
            if v is None or last.get(k, object()) == v and type(last.get(k)) is type(v):
                continue
            s = _vcd_value(v, code, width.get(k, 32))
            if s is not None:
                changes.append(s)
                last[k] = v
        if changes:
            out.write(f"#{r.tick * step}\n")
            out.write("\n".join(changes) + "\n")
    out.write(f"#{trace.ticks * step}\n")
    return out.getvalue()


def to_csv(trace) -> str:
    """``tick,signal,value`` rows, one per value change, plus channel transfers."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["tick", "signal", "value"])
    last = {}
    for r in trace.records:
        for k in sorted(set(r.registers) | set(r.pins)):
            v = r.registers.get(k, r.pins.get(k))
            if k not in last or last[k] != v:
                w.writerow([r.tick, k, _csv_value(v)])
                last[k] = v
        for ch, direction, v in r.transfers:
            w.writerow([r.tick, f"{ch}.{direction}", _csv_value(v)])
        for code, ref in r.events:
            w.writerow([r.tick, f"event.{code}", ref])
    return out.getvalue()


def _csv_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, tuple):
        return " ".join(_csv_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_vcd_changes(text: str) -> dict[str, list[tuple[int, str]]]:
    """Tiny reader used to check dumps: signal name -> [(time, value)]."""
    names, out, t = {}, {}, 0
    for line in text.splitlines():
        if line.startswith("$var"):
            parts = line.split()
            names[parts[3]] = parts[4]
            out[parts[4]] = []
        elif line.startswith("#"):
            t = int(line[1:])
        elif line and line[0] in "br":
            val, code = line[1:].split()
            out[names[code]].append((t, val))
        elif line and line[0] in "01xz" and line[1:] in names:
            out[names[line[1:]]].append((t, line[0]))
    return out
