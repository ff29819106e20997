"""Exception hierarchy shared across the package.

Every error carries the process exit code the CLI maps it to: config
errors exit 2, data-format errors exit 3, numerical failures exit 4.
"""

from __future__ import annotations


class VildError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(VildError):
    """Invalid configuration, CLI arguments, or missing input files."""

    exit_code = 2


class DataFormatError(VildError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class DimensionMismatchError(DataFormatError):
    """Operands or records with incompatible dimensions."""


class NumericalError(VildError):
    """Numerical failure: divergence, overflow, or undefined results."""

    exit_code = 4


class NormalizationError(NumericalError):
    """Normalization of a zero or non-finite vector."""
