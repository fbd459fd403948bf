"""Exception taxonomy shared across the toolkit.

ConfigurationError maps to CLI exit code 1, NumericError to exit code 2.
"""


class BetofError(Exception):
    pass


class ConfigurationError(BetofError):
    """Invalid parameter combination or malformed configuration."""


class DomainError(BetofError):
    """Argument outside the mathematical domain of an operation."""


class StateError(BetofError):
    """Operation called on an object in the wrong state (e.g. not frozen)."""


class NumericError(BetofError):
    """Numeric failure: divergence, no valid pixels, unachievable target."""
