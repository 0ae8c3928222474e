"""Graphical-dataflow toolchain targeting a host processor plus a reconfigurable fabric."""

from .cosim import COSIM, HOST, RunResult, cosimulate
from .elaborate import DepthTable, check_sctl, elaborate, expand, infer_types, partition
from .errors import Diagnostic, RioflowError, SourceSpan
from .gtext import ParseError, format_project, load_project, parse
from .runtime import ExecConfig, run
from .types import Value, WireType

__version__ = "0.1.0"

__all__ = [
    "COSIM", "HOST", "DepthTable", "Diagnostic", "ExecConfig", "ParseError", "RioflowError", "RunResult",
    "SourceSpan", "Value", "WireType", "check_sctl", "cosimulate", "elaborate", "expand", "format_project",
    "infer_types", "load_project", "parse", "partition", "run",
]
