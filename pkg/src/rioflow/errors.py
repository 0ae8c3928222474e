"""Error and diagnostic types shared across the toolchain."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 1

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise ValueError("span line and column are 1-based")

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    ref: str = ""
    message: str = ""
    span: SourceSpan | None = None

    def __str__(self):
        where = f"{self.span}: " if self.span else ""
        ref = f" [{self.ref}]" if self.ref else ""
        return f"{where}{self.code}{ref}: {self.message}"


class RioflowError(Exception):
    """A fault carrying a stable error code.

    ``details`` holds structured data specific to the code (critical path,
    offending wire, ...).
    """

    def __init__(self, code, message="", *, ref="", span=None, details=None):
        self.code = code
        self.message = message
        self.ref = ref
        self.span = span
        self.details = dict(details or {})
        super().__init__(str(self.diagnostic))

    @property
    def diagnostic(self) -> Diagnostic:
        return Diagnostic(self.code, self.ref, self.message, self.span)

    @classmethod
    def from_diagnostics(cls, diags):
        first = diags[0]
        err = cls(first.code, first.message, ref=first.ref, span=first.span)
        err.details["diagnostics"] = list(diags)
        return err
