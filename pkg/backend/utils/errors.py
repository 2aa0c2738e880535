"""Exception hierarchy shared by all packages.

The CLI maps these onto exit codes: configuration problems exit with 1,
data problems with 2, numerical failures with 3.
"""

from pathlib import Path
from typing import Optional


class WeakRBoxError(Exception):
    """Base class for every error raised deliberately by this project."""


class ConfigError(WeakRBoxError, ValueError):
    """Invalid or unreadable configuration."""


class DataError(WeakRBoxError, ValueError):
    """Malformed annotations, unknown classes, impossible data requests."""


class DegeneratePolygonError(DataError):
    """Point set spans no area (fewer than three non-collinear points)."""


class UndefinedPhaseError(WeakRBoxError, ArithmeticError):
    """Phasor sum with zero magnitude; its argument is undefined."""


class NumericalError(WeakRBoxError, ArithmeticError):
    """Non-finite loss or parameters during optimisation."""

    def __init__(self, message: str, dump_path: Optional[Path] = None):
        super().__init__(message)
        self.dump_path = dump_path
