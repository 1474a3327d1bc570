"""Exception hierarchy shared by every stage of the codec."""

from __future__ import annotations


class CodecError(Exception):
    """Base class; the CLI maps subclasses of this to exit code 2."""


class InvalidInput(CodecError, ValueError):
    pass


class SpanTooLong(CodecError):
    def __init__(self, start: int, end: int, max_len: int):
        super().__init__(
            f"clip [{start}, {end}] spans {end - start + 1} frames, max is {max_len}"
        )
        self.start = start
        self.end = end
        self.max_len = max_len


class ParseError(CodecError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class DegenerateTrajectory(CodecError):
    pass


class EncodeRangeError(CodecError):
    pass


class FormatError(CodecError):
    pass


class TruncationError(CodecError):
    def __init__(self, offset: int, what: str = "stream"):
        super().__init__(f"truncated {what} at byte offset {offset}")
        self.offset = offset


class CorruptStream(CodecError):
    pass


class InvariantViolation(AssertionError):
    """Internal consistency check failed; the CLI maps this to exit code 3."""
