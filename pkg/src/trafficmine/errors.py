"""Shared exception hierarchy.

Stage-specific errors subclass TrafficMineError in the module that raises
them; the CLI maps ConfigInvalid/InputMissing to exit code 1 and every other
TrafficMineError to exit code 2.
"""


class TrafficMineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigInvalid(TrafficMineError):
    """A run configuration is structurally or semantically invalid."""


class InputMissing(TrafficMineError):
    """A configured input file or directory does not exist."""
