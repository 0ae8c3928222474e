"""A free-running counter in a timed loop, run two ways.

The loop body adds one to a shift register every clock tick. We run it as
a compiled netlist (cosim) and under the host interpreter (host) and check
both give the same register stream, then dump a waveform.

    python3 demos/01_counter.py [outdir]
"""

import sys
from pathlib import Path

from rioflow import COSIM, HOST, cosimulate, elaborate, parse
from rioflow.trace import atomic_write, to_vcd

COUNTER = """\
clock fpga 40000000 Hz
vi Top {
  indicator cnt: i32
  sctl L clock fpga {
    shift c: i32 = 0
    node one: Const(value=1)
    node inc: Add
    wire c -> inc.x
    wire one.out -> inc.y
    wire inc.sum -> c
  }
  wire L.c -> cnt
}
top Top
"""

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
p = parse(COUNTER, "counter.gtext")

# the body is three nodes; the adder is 5 ns deep against a 25 ns period
flat, plan, reports = elaborate(p)
r = reports[0]
print(f"timed loop {plan.fabric_loops[0].node.id}: path {r.path_ns} ns, slack {r.slack_ns} ns")

runs = {mode: cosimulate(p, mode=mode, nticks=100) for mode in (COSIM, HOST)}
streams = {m: res.trace.output_stream("L.c") for m, res in runs.items()}
assert streams[COSIM] == streams[HOST]
print("first latched values:", streams[COSIM][:8])

s = runs[COSIM].summary()
print(f"{s['ticks']} ticks; register during the last tick {s['final_registers']['L.c']}, "
      f"indicator after it {s['outputs']['cnt']}")

atomic_write(out / "counter.vcd", to_vcd(runs[COSIM].trace))
print("waveform written to", out / "counter.vcd")
