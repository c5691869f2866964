"""Deterministic "as if" yellow-virus loss simulation for sugar beet."""

from __future__ import annotations

from .errors import ClimateFormatError, CoverageError, InputError, InvariantError, RankDeficientError, YellowRiskError

__version__ = "0.1.0"

__all__ = [
    "ClimateFormatError",
    "CoverageError",
    "InputError",
    "InvariantError",
    "RankDeficientError",
    "YellowRiskError",
    "__version__",
]
