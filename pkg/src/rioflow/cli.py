"""``rioflow`` command line: check, sim, estimate and the equalizer demo.

Exit codes: 0 ok, 1 design error, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ir
from .elaborate import (DepthTable, TypeEnv, check_sctl, expand, infer_project, partition_diagnostics)
from .errors import RioflowError
from .fabric import ZERO, compile_sctl, estimate, hls_estimate
from .gtext import ParseError, load_project, parse
from .trace import atomic_write, to_csv, to_vcd, write_json
from .types import default_payload, to_python

EXIT_OK, EXIT_DESIGN, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
RUNTIME_CODES = {"E_DEADLOCK", "E_LIMIT", "E_RUNTIME", "E_MISSING_INPUT", "E_UNDERRUN"}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    project: Path | None
    stimulus: list = field(default_factory=list)
    out: Path = Path("rioflow-out")
    clocks: dict = field(default_factory=dict)
    seed: int = 0
    ticks: int = 1000
    trace: tuple = ("vcd", "csv")
    mode: str = "cosim"
    inputs: dict = field(default_factory=dict)
    dma: dict = field(default_factory=dict)
    devices: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ticks <= 0:
            raise UsageError("tick budget must be > 0")


# ------------------------------------------------------------------ helpers


def _parse_clock(s: str) -> tuple[str, int]:
    name, sep, hz = s.partition("=")
    if not sep or not name:
        raise UsageError(f"--clock expects NAME=HZ, got {s!r}")
    try:
        v = int(float(hz))
    except ValueError:
        raise UsageError(f"bad clock frequency {hz!r}") from None
    if v <= 0:
        raise UsageError("clock frequency must be > 0")
    return name, v


def _manifest(args) -> RunManifest:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config is not valid JSON: {e}") from None
    clocks = {k: int(v) for k, v in cfg.get("clocks", {}).items()}
    clocks.update(dict(_parse_clock(c) for c in (getattr(args, "clock", None) or [])))
    trace = getattr(args, "trace", None)
    trace = tuple(t for t in (trace or ",".join(cfg.get("trace", ["vcd", "csv"]))).split(",") if t)
    if any(t not in ("vcd", "csv") for t in trace):
        raise UsageError(f"unknown trace format in {trace}")
    stim = list(cfg.get("stimulus", [])) if isinstance(cfg.get("stimulus", []), list) else [cfg["stimulus"]]
    stim += list(getattr(args, "stimulus", None) or [])
    pick = lambda name, default: (getattr(args, name, None) if getattr(args, name, None) is not None
                                  else cfg.get(name, default))
    return RunManifest(
        Path(args.project) if getattr(args, "project", None) else None, stim,
        Path(pick("out", "rioflow-out")), clocks, int(pick("seed", 0)), int(pick("ticks", 1000)), trace,
        pick("mode", "cosim"), dict(cfg.get("inputs", {})), dict(cfg.get("dma", {})),
        list(cfg.get("devices", [])), cfg)


def _load(path: Path):
    if path is None or not path.is_file():
        raise UsageError(f"project file not found: {path}")
    return load_project(path)


def _with_clocks(p, clocks):
    import dataclasses

    if not clocks:
        return p
    return dataclasses.replace(p, clocks={**p.clocks, **clocks})


def _span_of(p, ref: str):
    """Best-effort source location for a node path like ``loop/n``."""
    head = ref.split("/")[0].split(".")[0].split("[")[0]
    for vi in p.vis.values():
        for n in vi.diagram.nodes:
            if n.id == head:
                return n.span
    return None


def _fmt_diag(path, d, p=None) -> str:
    span = d.span or (p is not None and _span_of(p, d.ref)) or None
    where = str(span) if span else str(path)
    ref = f" [{d.ref}]" if d.ref else ""
    return f"{where}: {d.code}: {d.message}{ref}"


def _default_inputs(d: ir.Diagram, given: dict) -> dict:
    out = {}
    for c in d.controls:
        out[c.name] = given[c.name] if c.name in given else to_python(c.type, default_payload(c.type))
    return out


# ------------------------------------------------------------------ commands


def check_project(p, table: DepthTable):
    """All design diagnostics of a parsed project: ``(diagnostics, flat, plan, reports)``."""
    try:
        flat = infer_project(expand(p))
    except RioflowError as e:
        return [e.diagnostic], None, None, []
    plan, diags = partition_diagnostics(flat)
    if plan is None:
        return diags, flat, None, []
    reports = [check_sctl(fl.node, fl.clock_hz, table, flat.ips) for fl in plan.fabric_loops]
    for r in reports:
        diags.extend(r.errors)
    return diags, flat, plan, reports


def cmd_check(args) -> int:
    m = _manifest(args)
    p = _with_clocks(_load(m.project), m.clocks)
    diags, _, plan, _ = check_project(p, DepthTable.from_env())
    for d in diags:
        msg = _fmt_diag(m.project, d, p)
        print(msg, file=sys.stderr)
    if not diags:
        loops = len(plan.fabric_loops) if plan else 0
        print(f"{m.project}: ok ({loops} timed loop{'s' if loops != 1 else ''})")
    return EXIT_DESIGN if diags else EXIT_OK


def cmd_sim(args) -> int:
    from .cosim import cosimulate
    from .scanio import load_stimulus_csv

    m = _manifest(args)
    if m.mode not in ("host", "cosim"):
        raise UsageError(f"unknown mode {m.mode!r}")
    p = _with_clocks(_load(m.project), m.clocks)
    table = DepthTable.from_env()
    diags, flat, plan, _ = check_project(p, table)
    if diags:
        for d in diags:
            print(_fmt_diag(m.project, d, p), file=sys.stderr)
        return EXIT_DESIGN
    sources = {}
    for s in m.stimulus:
        if not Path(s).is_file():
            raise UsageError(f"stimulus file not found: {s}")
        sources.update(load_stimulus_csv(s))
    res = cosimulate(p, mode=m.mode, inputs=_default_inputs(p.top_vi.diagram, m.inputs), nticks=m.ticks,
                     seed=m.seed, table=table, dma=m.dma or None, devices=m.devices, record=bool(m.trace),
                     io_sources=sources, base_dir=m.project.parent)
    m.out.mkdir(parents=True, exist_ok=True)
    if "vcd" in m.trace:
        atomic_write(m.out / "trace.vcd", to_vcd(res.trace))
    if "csv" in m.trace:
        atomic_write(m.out / "trace.csv", to_csv(res.trace))
    summary = res.summary()
    write_json(m.out / "summary.json", summary)
    io = next((d.io for d in res.devices if hasattr(d, "io")), None)
    if io is not None:
        rows = ["tick,channel,value"] + [f"{t},{c},{v!r}" for t, c, v in io.output_log]
        atomic_write(m.out / "scan_output.csv", "\n".join(rows) + "\n")
    print(f"{m.project}: {summary['ticks']} ticks, {summary['firings']} firings, "
          f"{summary['underruns']} underruns, {summary['overflows']} overflows ({m.mode})")
    for k, v in summary["outputs"].items():
        print(f"  {k} = {v}")
    return EXIT_OK


def _annotated_loops(d: ir.Diagram, prefix=""):
    for n in d.nodes:
        s = n.structure
        if n.op in (ir.FOR, ir.WHILE) and (s.unroll != 1 or s.target_ii is not None):
            yield prefix + n.id, s
        for sub, body in ir.structure_bodies(n):
            yield from _annotated_loops(body, prefix + sub + "/")


def estimate_report(p, table: DepthTable) -> tuple[dict, list]:
    diags, flat, plan, reports = check_project(p, table)
    fatal = [d for d in diags if d.code != "E_SCTL_TIMING"]
    if fatal:
        return {}, fatal
    env = TypeEnv.of(flat)
    loops, total = [], ZERO
    for fl, r in zip(plan.fabric_loops, reports):
        nl = compile_sctl(fl.node, table, fl.clock_hz, env, check=False)
        est = estimate(nl, table, flat.ips)
        total += est
        loops.append({"loop": fl.node.id, "clock_hz": fl.clock_hz, "path_ns": r.path_ns,
                      "period_ns": r.period_ns, "slack_ns": r.slack_ns, "feasible": r.feasible,
                      "critical_path": list(r.critical_path), "resources": est.as_dict()})
    hls = []
    for vi_name, vi in sorted(flat.vis.items()):
        for path, s in _annotated_loops(vi.diagram, vi_name + "/"):
            h = hls_estimate(s.body, s.unroll, s.target_ii, table)
            hls.append({"loop": path, "unroll": h.unroll, "target_ii": h.target_ii, "ii": h.ii,
                        "n_mul": h.n_mul, "met": h.met, "resources": h.resources.as_dict()})
    report = {"loops": loops, "total": total.as_dict(), "hls": hls,
              "feasible": all(x["feasible"] for x in loops)}
    return report, [d for d in diags if d.code == "E_SCTL_TIMING"]


def cmd_estimate(args) -> int:
    m = _manifest(args)
    p = _with_clocks(_load(m.project), m.clocks)
    try:
        report, diags = estimate_report(p, DepthTable.from_env())
    except RioflowError as e:
        report, diags = {}, [e.diagnostic]
    if not report:
        for d in diags:
            print(_fmt_diag(m.project, d, p), file=sys.stderr)
        return EXIT_DESIGN
    write_json(m.out / "estimate.json", report)
    print(f"{'loop':<16}{'clock Hz':>12}{'path ns':>10}{'slack ns':>10}{'lut':>8}{'ff':>8}{'dsp':>6}{'bram':>6}")
    for x in report["loops"]:
        r = x["resources"]
        print(f"{x['loop']:<16}{x['clock_hz']:>12}{x['path_ns']:>10g}{x['slack_ns']:>10g}"
              f"{r['lut']:>8}{r['ff']:>8}{r['dsp']:>6}{r['bram']:>6}")
    t = report["total"]
    print(f"{'total':<48}{t['lut']:>8}{t['ff']:>8}{t['dsp']:>6}{t['bram']:>6}")
    for h in report["hls"]:
        met = "" if h["met"] is None else (" (target met)" if h["met"] else " (target missed)")
        print(f"hls {h['loop']}: unroll {h['unroll']}, II {h['ii']}{met}")
    for d in diags:
        print(_fmt_diag(m.project, d, p), file=sys.stderr)
    return EXIT_OK if report["feasible"] else EXIT_DESIGN


def cmd_demo(args) -> int:
    from .demo import SAMPLE_RATE, run_demo, sine_pcm, template_text, write_pcm

    m = _manifest(args)
    cfg = m.extra
    if m.project is not None:
        if not m.project.is_file():
            raise UsageError(f"project file not found: {m.project}")
        text = m.project.read_text()
    else:
        text = template_text()
    try:
        default_clock = parse(text, str(m.project or "wms.gtext")).clocks.get("fpga", 1_000_000)
    except ParseError as e:
        print(str(e), file=sys.stderr)
        return EXIT_DESIGN
    clock = m.clocks.get("fpga", default_clock)
    samples = args.samples if args.samples is not None else cfg.get("samples", 10_000)
    gains = args.gains or cfg.get("gains", [1.0, 1.0, 1.0])
    if isinstance(gains, str):
        gains = [float(g) for g in gains.split(",")]
    if len(gains) != 3:
        raise UsageError("--gains expects three comma-separated values")
    pcm = args.input or cfg.get("input")
    m.out.mkdir(parents=True, exist_ok=True)
    if pcm is None:
        pcm = m.out / "input.pcm"
        write_pcm(pcm, sine_pcm(samples))
    elif not Path(pcm).is_file():
        raise UsageError(f"input PCM not found: {pcm}")
    threshold = int(args.underrun_threshold if args.underrun_threshold is not None
                    else cfg.get("underrun_threshold", 0))
    res = run_demo(pcm, samples=samples, gains=gains, clock_hz=clock, project_text=text, seed=m.seed,
                   dma=m.dma or None, capacity=int(cfg.get("capacity", 64)))
    atomic_write(m.out / "output.pcm", np.asarray(res.samples, dtype="<i2").tobytes())
    report = res.report()
    report.update(clock_hz=clock, sample_rate=SAMPLE_RATE, gains=list(gains))
    write_json(m.out / "demo_report.json", report)
    print(f"emitted {report['samples']} samples at {SAMPLE_RATE} Hz from a {clock} Hz clock")
    print(f"ticks per sample {report['ticks_per_sample']}, max jitter {report['max_abs_jitter']}, "
          f"underruns {report['underruns']}")
    print(f"max error vs reference {report['max_lsb_error']} LSB, "
          f"{100 * report['within_1_lsb']:.2f}% within 1 LSB")
    if report["underruns"] > threshold:
        print(f"E_UNDERRUN: {report['underruns']} underruns > threshold {threshold}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rioflow", description="Host/fabric dataflow toolchain.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, project_required=True):
        if project_required:
            sp.add_argument("project", help="gtext project file")
        else:
            sp.add_argument("project", nargs="?", help="gtext project file (default: bundled template)")
        sp.add_argument("--clock", action="append", metavar="NAME=HZ", help="override a declared clock")
        sp.add_argument("--config", help="JSON run manifest")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="scheduler seed")

    c = sub.add_parser("check", help="validate, type, partition and time a project")
    common(c)
    s = sub.add_parser("sim", help="run a project (host-only or co-simulation)")
    common(s)
    s.add_argument("--mode", choices=("host", "cosim"))
    s.add_argument("--ticks", type=int, help="tick budget")
    s.add_argument("--trace", help="comma-separated trace formats: vcd,csv")
    s.add_argument("--stimulus", action="append", help="scan stimulus CSV (tick,channel,raw_value)")
    e = sub.add_parser("estimate", help="timing and resource report")
    common(e)
    d = sub.add_parser("demo", help="three-band equalizer feeding a DAC")
    common(d, project_required=False)
    d.add_argument("--input", help="16-bit mono PCM input (default: 1 kHz sine)")
    d.add_argument("--gains", help="band gains low,mid,high")
    d.add_argument("--samples", type=int, help="number of samples to play")
    d.add_argument("--underrun-threshold", type=int, help="underruns tolerated before exit 3")
    for sp in (c, e, d):
        sp.add_argument("--mode", help=argparse.SUPPRESS)
        sp.add_argument("--ticks", type=int, help=argparse.SUPPRESS)
        sp.add_argument("--trace", help=argparse.SUPPRESS)
    return ap


COMMANDS = {"check": cmd_check, "sim": cmd_sim, "estimate": cmd_estimate, "demo": cmd_demo}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"rioflow: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(str(e), file=sys.stderr)
        return EXIT_DESIGN
    except RioflowError as e:
        print(_fmt_diag(getattr(args, "project", None) or "rioflow", e.diagnostic), file=sys.stderr)
        return EXIT_RUNTIME if e.code in RUNTIME_CODES else EXIT_DESIGN


if __name__ == "__main__":
    sys.exit(main())
