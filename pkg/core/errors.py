"""
Exception hierarchy shared by all chartkit modules.
"""


class ChartError(Exception):
    """Base class for every error raised by chartkit."""

    exit_code = 1


class ValidationError(ChartError):
    """A value violates a documented type invariant."""


class FormatError(ChartError):
    """A file is not in the expected binary layout."""


class ConfigError(ChartError):
    """A configuration value is missing, unknown or out of range."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DegenerateInputError(ChartError):
    """Input has no usable content (zero matrix, zero variance, ...)."""


class ShapeError(ChartError):
    """Array dimensions do not match what the callee expects."""


class SelectionError(ChartError):
    """Triplet selection produced nothing to train on."""


class ContractError(ChartError):
    """A caller broke an API contract (stale cache, mismatched batch kind)."""


class NumericError(ChartError):
    """A non-finite value appeared during optimization."""

    exit_code = 2
