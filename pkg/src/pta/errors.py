"""Exception hierarchy shared by every module.

Callers that need exit-code mapping (see the CLI) rely on this taxonomy:
validation problems are ``ConfigError``/``DomainError``/``ParseError``,
runtime numerical failures are ``NumericError``, and a violated theorem
guarantee is ``BoundViolationError``.
"""


class PtaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PtaError, ValueError):
    """An operation received values outside its documented domain."""


class ConfigError(PtaError, ValueError):
    """A configuration object or parameter combination is invalid."""


class ValidationError(ConfigError):
    """A config document failed validation; carries every violation at once."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


class ParseError(PtaError, ValueError):
    """A file could not be parsed; message names the offending row/field."""


class NumericError(PtaError, FloatingPointError):
    """A numerical routine produced non-finite values or failed to converge."""


class UnknownClusterError(PtaError, KeyError):
    """A cluster id was requested that the snapshot does not contain."""


class InfeasibleConstraintError(PtaError, ValueError):
    """The detection-budget constraint admits no feasible embedding."""


class BoundViolationError(PtaError):
    """A theorem-guaranteed bound was violated beyond arithmetic slack."""
