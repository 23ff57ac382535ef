"""Exception types shared across the package."""


class STTError(Exception):
    """Base class for all errors raised by sttgcn."""

    kind = "error"


class UsageError(STTError, ValueError):
    """Invalid arguments: bad mode, shape mismatch, rank out of range."""

    kind = "usage"


class FormatError(STTError, ValueError):
    """Malformed input file or record."""

    kind = "format"


class NumericalError(STTError, ArithmeticError):
    """A linear-algebra kernel failed to converge."""

    kind = "numerical"
