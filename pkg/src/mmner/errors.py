"""Exception types shared across the package."""


class MmnerError(Exception):
    """Base class for all package errors."""


class ShapeError(MmnerError, ValueError):
    """Operand shapes are incompatible."""


class NumericDomainError(MmnerError, ArithmeticError):
    """An input lies outside the domain of a numeric operation."""


class ContractError(MmnerError, ValueError):
    """A caller violated an operation's precondition."""


class ParseError(MmnerError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MmnerError, ValueError):
    """Well-formed input that violates a data invariant."""


class ConfigError(MmnerError, ValueError):
    """Invalid or inconsistent configuration."""


class VersionError(MmnerError):
    """Checkpoint format or model mismatch."""
