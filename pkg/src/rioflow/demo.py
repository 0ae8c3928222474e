"""Three-band equalizer feeding a DAC through a host-to-fabric DMA FIFO.

Host side: a PCM file goes through low, mid and high biquad sections whose
outputs are weighted by per-band gains, summed, quantized to 16 bits and
streamed into a DMA FIFO. Fabric side: a timed loop counts clock ticks and,
once per sample period, moves one sample from the DMA FIFO into the DAC
buffer and into a level register; a second timed loop tracks the peak
level. The DAC emits one sample every ``round(f_clk / 44100)`` ticks.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import signal

from . import ir
from .cosim import cosimulate
from .gtext import parse
from .scanio import jitter, ticks_per_sample

SAMPLE_RATE = 44100
BANDS = ("low", "mid", "high")
PCM_NODE = "src"


def design_filters(fs: int = SAMPLE_RATE) -> dict[str, tuple[float, ...]]:
    """Butterworth sections: low-pass 300 Hz, band-pass 300-3000 Hz, high-pass 3 kHz.

    Each entry is ``(b0, b1, b2, a1, a2)`` with ``a0`` normalized to 1.
    """
    specs = {"low": (2, 300, "lowpass"), "mid": (1, [300, 3000], "bandpass"), "high": (2, 3000, "highpass")}
    out = {}
    for band, (order, wn, kind) in specs.items():
        b, a = signal.butter(order, wn, btype=kind, fs=fs)
        out[band] = (float(b[0]), float(b[1]), float(b[2]), float(a[1]), float(a[2]))
    return out


def render_project(coeffs: dict | None = None, samples: int = 10_000, clock_hz: int = 1_000_000,
                   capacity: int = 64, pcm: str = "input.pcm") -> str:
    """gtext source of the equalizer project with coefficients as literals."""
    coeffs = coeffs or design_filters()
    bq = "\n".join(
        f"  node {band}: Biquad(b0={c[0]!r}, b1={c[1]!r}, b2={c[2]!r}, a1={c[3]!r}, a2={c[4]!r})"
        for band, c in coeffs.items())
    return f"""\
# Three-band equalizer: host filter bank -> DMA FIFO -> timed loop -> DAC at {SAMPLE_RATE} Hz.
clock fpga {clock_hz} Hz
channel audio fifo<fxp<16,1>, {capacity}> host -> fabric
channel ao fifo<fxp<16,1>, 16> fabric -> fabric
register level <fxp<16,1>> fabric -> fabric

vi Equalizer {{
  control g_low: f64
  control g_mid: f64
  control g_high: f64
  control spacing: i32
  indicator peak: fxp<16,1>

  node {PCM_NODE}: FileReadPCM(path="{pcm}", rate={SAMPLE_RATE}, length={samples})
{bq}
  node gl: Mul
  node gm: Mul
  node gh: Mul
  node s1: Add
  node s2: Add
  node q: Convert(to=[fxp<16,1>; {samples}])
  node send: FifoWrite(channel=audio)
  wire {PCM_NODE}.samples -> low.x
  wire {PCM_NODE}.samples -> mid.x
  wire {PCM_NODE}.samples -> high.x
  wire low.y -> gl.x
  wire g_low -> gl.y
  wire mid.y -> gm.x
  wire g_mid -> gm.y
  wire high.y -> gh.x
  wire g_high -> gh.y
  wire gl.prod -> s1.x
  wire gm.prod -> s1.y
  wire s1.sum -> s2.x
  wire gh.prod -> s2.y
  wire s2.sum -> q.x
  wire q.out -> send.value

  # one sample per period: strobe when the tick counter wraps to zero
  sctl player clock fpga {{
    param spacing: i32
    shift cnt: i32 = 0
    node zero: Const(value=0)
    node one: Const(value=1)
    node hit: Eq
    node inc: Add
    node wrap: Eq
    node next: Select
    node rd: FifoRead(channel=audio, gated=true)
    node wr: FifoWrite(channel=ao, gated=true)
    node lv: RegWrite(channel=level)
    wire cnt -> hit.x
    wire zero.out -> hit.y
    wire cnt -> inc.x
    wire one.out -> inc.y
    wire inc.sum -> wrap.x
    wire spacing -> wrap.y
    wire wrap.out -> next.s
    wire zero.out -> next.t
    wire inc.sum -> next.f
    wire next.out -> cnt
    wire hit.out -> rd.en
    wire rd.value -> wr.value
    wire rd.ok -> wr.en
    wire rd.value -> lv.value
  }}

  # peak level meter
  sctl meter clock fpga {{
    shift pk: fxp<16,1> = 0.0
    node lr: RegRead(channel=level)
    node gt: Gt
    node pick: Select
    wire lr.value -> gt.x
    wire pk -> gt.y
    wire gt.out -> pick.s
    wire lr.value -> pick.t
    wire pk -> pick.f
    wire pick.out -> pk
  }}

  wire spacing -> player.spacing
  wire meter.pk -> peak
}}

top Equalizer
"""


def template_text() -> str:
    return resources.files("rioflow").joinpath("data/wms.gtext").read_text()


def write_pcm(path, samples):
    """16-bit little-endian mono PCM."""
    np.asarray(samples, dtype="<i2").tofile(path)


def sine_pcm(n: int, freq: float = 1000.0, amplitude: float = 0.5, fs: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n) / fs
    return np.clip(np.rint(amplitude * 32768 * np.sin(2 * np.pi * freq * t)), -32768, 32767).astype(np.int16)


def oracle(pcm: np.ndarray, gains, coeffs: dict | None = None) -> np.ndarray:
    """Double-precision reference: scipy filters, weighted sum, 16-bit quantization."""
    coeffs = coeffs or design_filters()
    x = np.asarray(pcm, dtype=np.float64) / 32768.0
    y = np.zeros_like(x)
    for g, band in zip(gains, BANDS):
        b0, b1, b2, a1, a2 = coeffs[band]
        y += g * signal.lfilter([b0, b1, b2], [1.0, a1, a2], x)
    return np.clip(np.rint(y * 32768.0), -32768, 32767).astype(np.int64)


def _with_pcm_length(project, n: int):
    """Resize the PCM reader and quantizer to ``n`` samples."""
    from .types import array

    vi = project.top_vi
    d = vi.diagram
    nodes = []
    for node in d.nodes:
        if node.op == "FileReadPCM":
            node = dataclasses.replace(node, attrs={**node.attrs, "length": n})
        elif node.op == "Convert" and node.attrs["to"].kind == "array":
            node = dataclasses.replace(node, attrs={**node.attrs, "to": array(node.attrs["to"].elem, n)})
        nodes.append(dataclasses.replace(node, in_ports=tuple(ir.Port(p.name) for p in node.in_ports),
                                         out_ports=tuple(ir.Port(p.name) for p in node.out_ports))
                     if node.structure is None else node)
    vis = dict(project.vis)
    vis[vi.name] = dataclasses.replace(vi, diagram=dataclasses.replace(d, nodes=tuple(nodes)))
    return dataclasses.replace(project, vis=vis)


@dataclasses.dataclass
class DemoResult:
    samples: np.ndarray           # emitted DAC codes
    emission_ticks: list[int]
    ticks_per_sample: int
    jitter: list[int]
    underruns: int
    reference: np.ndarray | None
    run: object

    def lsb_errors(self) -> np.ndarray:
        n = min(len(self.samples), len(self.reference))
        return np.abs(self.samples[:n] - self.reference[:n])

    def report(self) -> dict:
        err = self.lsb_errors() if self.reference is not None else np.zeros(0)
        deltas = np.diff(self.emission_ticks)
        return {
            "samples": int(len(self.samples)),
            "ticks_per_sample": self.ticks_per_sample,
            "first_emission_tick": int(self.emission_ticks[0]) if self.emission_ticks else None,
            "max_abs_jitter": int(max((abs(j) for j in self.jitter), default=0)),
            "delta_min": int(deltas.min()) if len(deltas) else None,
            "delta_max": int(deltas.max()) if len(deltas) else None,
            "underruns": self.underruns,
            "max_lsb_error": int(err.max()) if len(err) else 0,
            "within_1_lsb": float(np.mean(err <= 1)) if len(err) else 1.0,
            "ticks": self.run.trace.ticks,
        }


def run_demo(pcm_path, *, samples: int | None = None, gains=(1.0, 1.0, 1.0), clock_hz: int = 1_000_000,
             capacity: int = 64, project_text: str | None = None, seed: int = 0, dma: dict | None = None,
             with_reference: bool = True) -> DemoResult:
    """Run the equalizer in co-simulation until every input sample has been emitted."""
    pcm = np.fromfile(pcm_path, dtype="<i2")
    n = len(pcm) if samples is None else min(samples, len(pcm))
    text = project_text or template_text()
    project = parse(text, "wms.gtext")
    project = _with_pcm_length(project, n)
    project = dataclasses.replace(project, channels=tuple(
        dataclasses.replace(c, capacity=capacity) if c.name == "audio" else c for c in project.channels))
    tps = ticks_per_sample(clock_hz, SAMPLE_RATE)
    dac = {"kind": "dac", "name": "dac0", "channel": "ao", "rate": SAMPLE_RATE, "clock": "fpga"}
    inputs = {"g_low": float(gains[0]), "g_mid": float(gains[1]), "g_high": float(gains[2]), "spacing": tps}
    budget = tps * (n + capacity + 4) + 64

    def done(sim):
        return len(sim.devices[0].log) >= n

    res = cosimulate(project, inputs=inputs, nticks=budget, seed=seed, clocks={"fpga": clock_hz}, dma=dma,
                     devices=[dac], record=False, pcm_override={PCM_NODE: str(pcm_path)}, until=done)
    ao = res.devices[0]
    ticks = [t for t, _ in ao.log]
    out = np.array([v for _, v in ao.log], dtype=np.int64)
    ref = oracle(pcm[:n], gains) if with_reference else None
    return DemoResult(out, ticks, ao.ticks_per_sample, jitter(ao), ao.underruns, ref, res)
