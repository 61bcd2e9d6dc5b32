"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataMissingError -> 3,
NumericalError -> 4.  Everything else is a bug and propagates.
"""

from __future__ import annotations


class SpikeloopError(Exception):
    """Base class for all expected failures."""


class ConfigError(SpikeloopError):
    """Invalid configuration: bad value, unknown key, shape/topology violation."""


class EventFormatError(ConfigError):
    """Malformed event file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataMissingError(SpikeloopError):
    """A referenced dataset or checkpoint file does not exist."""


class NumericalError(SpikeloopError):
    """NaN/Inf encountered in state, loss, or gradients."""


def exit_code_for(exc: BaseException) -> int:
    """Process exit code for an expected failure (see module docstring)."""
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, DataMissingError):
        return 3
    if isinstance(exc, NumericalError):
        return 4
    return 1
