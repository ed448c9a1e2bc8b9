"""Exception hierarchy shared across the package."""


class DsaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DsaError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(DsaError, ValueError):
    """Invalid configuration value or combination."""


class EmptySequenceError(DsaError, ValueError):
    """A sequence (or a masked column) has no valid positions."""


class BatchSizeError(DsaError, ValueError):
    """Batch too small for the requested operation."""


class ContractError(DsaError, ValueError):
    """A precondition of an operation was violated."""


class EvaluationError(DsaError, ArithmeticError):
    """A function evaluated to a non-finite value."""


class NonFiniteGradientError(DsaError, ArithmeticError):
    """An optimizer step saw NaN or Inf in a gradient."""


class InsufficientDataError(DsaError, ValueError):
    """Too few samples for a statistical procedure."""


class UnknownTokenError(DsaError, KeyError):
    """A token has no row in the embedding table."""


class DataError(DsaError):
    """Problem with an input data file."""


class ParseError(DataError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class FormatError(DataError, ValueError):
    """Well-formed lines that disagree with each other (e.g. vector dims)."""
