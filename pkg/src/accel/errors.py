"""Exception hierarchy shared by every stage of the accelerator."""

from __future__ import annotations


class AccelError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(AccelError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"{line}:{column}: " if line else ""
        super().__init__(f"{where}{message}")


class UnsupportedFeature(ParseError):
    """The program uses a construct outside the traceable fragment."""

    def __init__(self, construct: str, line: int = 0, column: int = 0):
        self.construct = construct
        super().__init__(f"unsupported feature: {construct}", line, column)


class CompileError(AccelError):
    """Raised by the instrumenter (unbound variable, unknown label)."""


class TraceError(AccelError):
    """Any failure of the tracing runtime. The invoker treats these as a bounce."""


class TraceCorruption(TraceError):
    """The instrumentation protocol was violated (stack underflow, bad frame)."""


class TraceDivergence(TraceError):
    """The same trace position was reached with a different shape."""


class GuestError(AccelError):
    """A runtime error in guest code; the request fails with status 500."""


class DynTypeError(GuestError):
    pass


class GuestTimeout(GuestError):
    pass


class ResourceLimit(GuestError):
    """A per-request bound was exceeded."""


class InstructionLimit(ResourceLimit):
    pass


class MemoryLimit(ResourceLimit):
    pass
