"""The scan engine: coherent snapshots of analog inputs.

Four input channels ramp at different offsets. A reader thread keeps
pulling the latest snapshot while scans run; every snapshot must hold
values from a single scan cycle. Then a small host program reads two
channels, adds them and writes an output channel every scan.

    python3 demos/04_scan_engine.py
"""

import threading

from rioflow import cosimulate, parse
from rioflow.scanio import IoState, ScanChannel, ScanConfig, StepSource, eng_convert, ramp, scan_tick

cfg = ScanConfig(1000, tuple(ScanChannel(f"ai{i}", "in", gain=10 / 32768) for i in range(4)))
io = IoState({f"ai{i}": ramp(1000 * i) for i in range(4)})
scan_tick(cfg, io)

torn, seen = 0, 0
stop = threading.Event()


def reader():
    global torn, seen
    while not stop.is_set():
        s = io.latest()
        seen += 1
        torn += len({s.raw[f"ai{i}"] - 1000 * i for i in range(4)}) != 1


t = threading.Thread(target=reader)
t.start()
for _ in range(5000):
    scan_tick(cfg, io)
stop.set()
t.join()
last = io.latest()
print(f"{last.index + 1} scans, reader saw {seen} snapshots, {torn} torn")
print("last snapshot (V):", {k: round(v.to_python(), 5) for k, v in sorted(last.values.items())})
print("full scale code 32767 ->", round(eng_convert(32767, 10 / 32768, 0), 5), "V")

SUM = """\
scan period 1000 us
scan in ai0: i32 gain 0.001 offset 0.0
scan in ai1: i32 gain 0.001 offset 0.0
scan out ao0: i32 gain 0.001 offset 0.0
vi Top {
  indicator s: f64
  node r0: ScanRead(channel=ai0)
  node r1: ScanRead(channel=ai1)
  node add: Add
  node w: ScanWrite(channel=ao0)
  wire r0.value -> add.x
  wire r1.value -> add.y
  wire add.sum -> w.value
  wire add.sum -> s
}
top Top
"""
res = cosimulate(parse(SUM), nticks=4, io_sources={"ai0": StepSource(((0, 100),)), "ai1": StepSource(((0, 250),))})
print("host result", res.outputs["s"].to_python(), "V; output log", res.devices[0].io.output_log[:3])
