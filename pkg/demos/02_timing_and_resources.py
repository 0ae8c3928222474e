"""Timing closure and resource estimates for timed-loop bodies.

Two bodies at 40 MHz: a chain of three adders fits in one period, two
chained multipliers do not. Then the estimator prices the adder body, and
the loop estimator shows what unrolling does to II and DSP use.

    python3 demos/02_timing_and_resources.py
"""

from rioflow import expand, infer_types, parse
from rioflow.elaborate import DepthTable, TypeEnv, check_sctl, infer_project
from rioflow.fabric import compile_sctl, estimate, hls_estimate

TEMPLATE = """\
clock fpga 40000000 Hz
vi T {{
  sctl L clock fpga {{
    shift s: i32 = 1
    {body}
  }}
}}
top T
"""

ADDS = """node a: Add  node b: Add  node c: Add
    wire s -> a.x  wire s -> a.y  wire a.sum -> b.x  wire s -> b.y
    wire b.sum -> c.x  wire s -> c.y  wire c.sum -> s"""
MULS = """node m1: Mul  node m2: Mul
    wire s -> m1.x  wire s -> m1.y  wire m1.prod -> m2.x  wire s -> m2.y  wire m2.prod -> s"""

table = DepthTable()
for name, body in (("adder chain", ADDS), ("multiplier chain", MULS)):
    p = infer_project(expand(parse(TEMPLATE.format(body=body))))
    loop = p.top_vi.diagram.node("L")
    r = check_sctl(loop, 40_000_000, table)
    verdict = "fits" if r.feasible else "misses timing"
    print(f"{name:17s} {r.path_ns:5.1f} ns of {r.period_ns:.1f} ns via {' -> '.join(r.critical_path)}: {verdict}")
    if r.feasible:
        e = estimate(compile_sctl(loop, table, env=TypeEnv.of(p)), table)
        # 3 adders x 32 bits of LUT; the 32-bit shift register is 32 FF
        print(f"{'':17s} estimate: {e.as_dict()}")

# a for loop with four dependent multiplies, unrolled by 1, 2 and 4
LOOP = """\
vi T {
  control k: f64
  indicator y: f64
  for L unroll %d {
    shift acc: f64 = 1.0
    control k: f64
    node m1: Mul  node m2: Mul  node m3: Mul  node m4: Mul
    wire acc -> m1.x  wire k -> m1.y  wire m1.prod -> m2.x  wire k -> m2.y
    wire m2.prod -> m3.x  wire k -> m3.y  wire m3.prod -> m4.x  wire k -> m4.y
    wire m4.prod -> acc
  }
  node n: Const(value=8)
  wire n.out -> L.N
  wire k -> L.k
  wire L.acc -> y
}
top T
"""
for u in (1, 2, 4):
    d = infer_types(parse(LOOP % u).top_vi.diagram)
    s = d.node("L").structure
    h = hls_estimate(s.body, s.unroll, None, table)
    print(f"unroll {u}: II {h.ii}, {h.resources.dsp} DSP")
