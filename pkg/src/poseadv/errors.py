"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code (see :mod:`poseadv.cli`).
"""


class PoseAdvError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(PoseAdvError, ValueError):
    """Invalid configuration, dimension mismatch or unreadable input file."""

    exit_code = 2


class DomainError(PoseAdvError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class FormatError(ConfigError):
    """Malformed image or data file."""


class ProtocolError(PoseAdvError):
    """Malformed, mismatched or timed-out detector wire message."""

    exit_code = 3


class NumericalError(PoseAdvError, ArithmeticError):
    """Singular system or non-finite value inside a numerical routine."""

    exit_code = 4
