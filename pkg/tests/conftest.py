import math
import struct

import pytest
from hypothesis import settings

from rioflow import expand, parse
from rioflow.elaborate import infer_project

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def flat(text, file="<test>"):
    """Parse, expand and type a project."""
    return infer_project(expand(parse(text, file)))


def bitwise(x):
    """Comparable form of a payload in which floats compare by bit pattern."""
    if isinstance(x, float):
        return ("f", struct.pack("<d", x))
    if isinstance(x, tuple):
        return tuple(bitwise(e) for e in x)
    return x


ADD2 = """\
vi Add2 {
  control a: f64
  control b: f64
  indicator s: f64
  node n1: Add
  wire a -> n1.x
  wire b -> n1.y
  wire n1.sum -> s
}
"""

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


@pytest.fixture
def add2():
    return flat(ADD2)


def pytest_terminal_summary(terminalreporter):
    acc = __import__("sys").modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[k])
