"""Independent execution routes shared by the fabric and acceptance tests."""

from __future__ import annotations

import random

from conftest import bitwise, flat

from rioflow.comm import create_channels
from rioflow.elaborate import TypeEnv
from rioflow.fabric import compile_sctl, simulate
from rioflow.runtime import Env, ExecConfig, TimedLoopRunner


def host_vs_fabric(text: str, nticks: int, seed: int = 0):
    """Run timed loop ``L`` both ways; return (host rows, fabric rows).

    Each row maps a latched register to its value after that tick. The run
    parameter ``p`` (if any) gets a fresh random value every tick, and FIFO
    ``inq`` (if declared) is pre-filled with a random stream.
    """
    p = flat(text)
    loop = p.top_vi.diagram.node("L")
    rng = random.Random(seed)
    params = list(loop.structure.params)
    stim = {f"L.{q}": [rng.randint(-1000, 1000) for _ in range(nticks)] for q in params}
    stream = [rng.randint(-(2**31), 2**31 - 1) for _ in range(nticks // 2)]

    def channels():
        ch = create_channels(p.channels)
        if "inq" in ch:
            for v in stream:
                assert ch["inq"].try_write(v)
        return ch

    nl = compile_sctl(loop, clock_hz=40_000_000, env=TypeEnv.of(p), check=False)
    trace = simulate([nl], stim, nticks, channels=channels())
    names = [r.name for r in nl.registers if r.kind in ("shift", "output")]
    fabric = [bitwise({n: rec.outputs[f"L.{n}"] for n in names}) for rec in trace.records]

    runner = TimedLoopRunner(loop, Env(channels=channels()), ExecConfig(seed=seed))
    host = []
    for k in range(nticks):
        runner.set_inputs({q: stim[f"L.{q}"][k] for q in params})
        out = runner.step()
        host.append(bitwise({n: out[n] for n in names}))
    return host, fabric
