"""Random gtext projects for property tests.

Every generator takes a ``random.Random`` so a failing case can be replayed
from its seed.
"""

from __future__ import annotations

import random

I32, F64, BOOL, FXP = "i32", "f64", "bool", "fxp<16,4>"


class _Body:
    """Accumulates nodes and wires while tracking typed sources."""

    def __init__(self, rng: random.Random, prefix: str = "n"):
        self.rng = rng
        self.prefix = prefix
        self.lines: list[str] = []
        self.pool: dict[str, list[str]] = {I32: [], F64: [], BOOL: [], FXP: []}
        self.count = 0
        self.produced: list[tuple[str, str]] = []

    def name(self):
        self.count += 1
        return f"{self.prefix}{self.count}"

    def pick(self, t):
        return self.rng.choice(self.pool[t])

    def add(self, decl: str, ins: dict, out: str | None, t: str | None):
        n = self.name()
        self.lines.append(f"node {n}: {decl}")
        for port, src in ins.items():
            self.lines.append(f"wire {src} -> {n}.{port}")
        if out is not None:
            ep = f"{n}.{out}"
            self.pool[t].append(ep)
            self.produced.append((ep, t))
        return n

    def const(self, t):
        r = self.rng
        if t == I32:
            return self.add(f"Const(value={r.randint(-50, 50)})", {}, "out", I32)
        if t == F64:
            return self.add(f"Const(value={r.choice([0.5, -1.25, 3.0, 0.1])!r})", {}, "out", F64)
        return self.add(f"Const(value={r.choice(['true', 'false'])})", {}, "out", BOOL)

    def random_op(self, fxp=False):
        r = self.rng
        kinds = ["arith_i", "arith_f", "cmp", "logic", "not", "select", "const", "i2f"]
        if fxp and self.pool[FXP]:
            kinds += ["fxp_add", "fxp_cmp"]
        if fxp:
            kinds.append("i2fxp")
        k = r.choice(kinds)
        if k == "arith_i" and self.pool[I32]:
            return self.arith(r.choice(["Add", "Sub", "Mul"]), I32)
        if k == "arith_f" and self.pool[F64]:
            return self.arith(r.choice(["Add", "Sub", "Mul"]), F64)
        if k == "cmp":
            t = r.choice([x for x in (I32, F64) if self.pool[x]] or [None])
            if t is not None:
                return self.add(r.choice(["Gt", "Lt", "Eq"]), {"x": self.pick(t), "y": self.pick(t)}, "out", BOOL)
        if k == "logic" and self.pool[BOOL]:
            return self.add(r.choice(["And", "Or"]), {"x": self.pick(BOOL), "y": self.pick(BOOL)}, "out", BOOL)
        if k == "not" and self.pool[BOOL]:
            return self.add("Not", {"x": self.pick(BOOL)}, "out", BOOL)
        if k == "select" and self.pool[BOOL]:
            t = r.choice([x for x in (I32, F64, BOOL) if self.pool[x]])
            return self.add("Select", {"s": self.pick(BOOL), "t": self.pick(t), "f": self.pick(t)}, "out", t)
        if k == "i2f" and self.pool[I32]:
            return self.add("Convert(to=f64)", {"x": self.pick(I32)}, "out", F64)
        if k == "i2fxp" and self.pool[I32]:
            return self.add(f"Convert(to={FXP})", {"x": self.pick(I32)}, "out", FXP)
        if k == "fxp_add":
            # full-precision sum narrowed back so the pool stays one fxp type
            s = self.add("Add", {"x": self.pick(FXP), "y": self.pick(FXP)}, None, None)
            return self.add(f"Convert(to={FXP})", {"x": f"{s}.sum"}, "out", FXP)
        if k == "fxp_cmp":
            return self.add(r.choice(["Gt", "Lt", "Eq"]), {"x": self.pick(FXP), "y": self.pick(FXP)}, "out", BOOL)
        return self.const(r.choice([I32, F64, BOOL]))

    def arith(self, op, t):
        out = {"Add": "sum", "Sub": "diff", "Mul": "prod"}[op]
        return self.add(op, {"x": self.pick(t), "y": self.pick(t)}, out, t)


def host_project(rng: random.Random, max_nodes: int = 12, fifo: bool = True, structures: bool = True) -> str:
    """A host VI with at most ``max_nodes`` nodes (structure bodies included)."""
    b = _Body(rng)
    head = []
    ctl = [("a", I32), ("b", I32), ("x", F64), ("y", F64), ("f", BOOL)]
    for n, t in ctl:
        b.pool[t].append(n)
    target = rng.randint(3, max_nodes)
    pending = fifo and target >= 4 and rng.random() < 0.5
    if pending:
        head.append("channel q fifo<i32, 4> host -> host")
        # the write goes first so its value never depends on the read
        b.add("FifoWrite(channel=q)", {"value": b.pick(I32)}, None, None)
        read_at = rng.randint(1, target - 1)
    loops = 0
    while b.count < target - pending:
        if pending and b.count >= read_at:
            b.add("FifoRead(channel=q)", {}, "value", I32)
            pending = False
            continue
        left = target - pending - b.count
        if structures and left >= 3 and rng.random() < 0.15:
            loops += 1
            _add_for(b, loops)
        elif structures and left >= 3 and rng.random() < 0.1 and b.pool[BOOL]:
            loops += 1
            _add_case(b, loops)
        else:
            b.random_op()
    if pending:
        b.add("FifoRead(channel=q)", {}, "value", I32)
    inds = []
    outs = b.produced[-4:] or [("a", I32)]
    for i, (ep, t) in enumerate(outs):
        inds.append(f"indicator o{i}: {t}")
        b.lines.append(f"wire {ep} -> o{i}")
    body = [f"control {n}: {t}" for n, t in ctl] + inds + b.lines
    return "\n".join(head + ["vi Top {"] + ["  " + line for line in body] + ["}", "top Top"]) + "\n"


def _add_for(b: _Body, k: int):
    r = b.rng
    t = r.choice([I32, F64])
    op = r.choice(["Add", "Mul"])
    n = b.add(f"Const(value={r.randint(0, 5)})", {}, "out", I32)
    name = f"L{k}"
    src = b.pick(t)
    init = "1" if t == I32 else "1.0"
    out = {"Add": "sum", "Mul": "prod"}[op]
    b.lines += [f"for {name} {{", f"  shift acc: {t} = {init}", f"  control k: {t}", f"  node s: {op}",
                "  wire acc -> s.x", "  wire k -> s.y", f"  wire s.{out} -> acc", "}",
                f"wire {n}.out -> {name}.N", f"wire {src} -> {name}.k"]
    b.count += 2
    b.pool[t].append(f"{name}.acc")
    b.produced.append((f"{name}.acc", t))


def _add_case(b: _Body, k: int):
    r = b.rng
    name = f"C{k}"
    sel = b.pick(BOOL)
    src = b.pick(I32) if b.pool[I32] else None
    if src is None:
        return b.const(I32)
    b.lines += [f"case {name}: bool default false {{", "  control v: i32", "  indicator o: i32",
                "  branch true {", "    node d: Add", "    wire v -> d.x", "    wire v -> d.y", "    wire d.sum -> o",
                "  }", "  branch false {", "    node m: Sub", "    wire v -> m.x", "    wire v -> m.y",
                "    wire m.diff -> o", "  }", "}", f"wire {sel} -> {name}.selector", f"wire {src} -> {name}.v"]
    b.count += 3
    b.pool[I32].append(f"{name}.o")
    b.produced.append((f"{name}.o", I32))


def sctl_project(rng: random.Random, max_nodes: int = 12, fxp: bool = True, params: bool = True,
                 fifo: bool = False) -> str:
    """One timed loop whose body uses only fabric-legal primitives.

    With ``fifo`` the body also pops channel ``inq`` once per tick.
    """
    b = _Body(rng)
    if fifo:
        n = b.add("FifoRead(channel=inq)", {}, "value", I32)
        b.pool[BOOL].append(f"{n}.ok")
    shifts = []
    for i, t in enumerate(rng.sample([I32, F64, BOOL, FXP] if fxp else [I32, F64, BOOL], rng.randint(1, 3))):
        init = {I32: str(rng.randint(-5, 5)), F64: "0.5", BOOL: "true", FXP: "1.25"}[t]
        shifts.append((f"s{i}", t, init))
        b.pool[t].append(f"s{i}")
    pnames = []
    if params and rng.random() < 0.6:
        pnames = ["p"]
        b.pool[I32].append("p")
    budget = rng.randint(1, max_nodes)
    while b.count < budget:
        b.random_op(fxp=fxp)
    drives = []
    for name, t, _ in shifts:
        choices = [ep for ep in b.pool[t] if "." in ep]
        if not choices:
            if t == FXP:
                if not b.pool[I32]:
                    b.const(I32)
                b.add(f"Convert(to={FXP})", {"x": b.pick(I32)}, "out", FXP)
            else:
                b.const(t)
            choices = [ep for ep in b.pool[t] if "." in ep]
        drives.append(f"wire {rng.choice(choices)} -> {name}")
    body = ([f"param {p}: i32" for p in pnames] + [f"shift {n}: {t} = {v}" for n, t, v in shifts]
            + b.lines + drives)
    lines = ["clock fpga 40000000 Hz"] + (["channel inq fifo<i32, 4096> fabric -> fabric"] if fifo else [])
    lines += ["vi Top {"] + [f"  control {p}: i32" for p in pnames]
    lines += ["  sctl L clock fpga {"] + ["    " + line for line in body] + ["  }"]
    lines += [f"  wire {p} -> L.{p}" for p in pnames] + ["}", "top Top"]
    return "\n".join(lines) + "\n"
