"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class RfdgError(Exception):
    """Base class for all package errors."""


class ConfigError(RfdgError, ValueError):
    """Invalid or unknown configuration keys / values."""


class ShapeError(RfdgError, ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericalError(RfdgError, ArithmeticError):
    """A NaN/Inf appeared, or a numerical precondition failed."""


class DataError(RfdgError):
    """Malformed dataset or container."""


class ContainerError(DataError):
    """On-disk container failed validation.

    ``kind`` is one of ``version``, ``truncated``, ``checksum``, ``offset``,
    ``schema``, ``missing``.
    """

    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(f"[{kind}] {message}")
