#!/usr/bin/env python3
"""
Rajchman Lab - Utility Functions
Error types, exact-number formatting, hashing and system utilities
"""

import hashlib
import json
import logging
import math
from fractions import Fraction
from typing import Any, Callable, Dict, Optional, Union

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64/SeedSequence(seed, block)"

Number = Union[int, float, Fraction]


# Error handling utilities
class LabError(Exception):
    """Base class for every failure the laboratory reports."""


class ConfigurationError(LabError):
    """Invalid or inconsistent run configuration."""


class ScheduleError(LabError, ValueError):
    """A parameter schedule violates its invariants or is queried out of range."""


class ScheduleSaturationError(ScheduleError):
    """Materialization hit the desk cap before reaching the requested value."""

    def __init__(self, message: str, cap: Optional[int] = None):
        super().__init__(message)
        self.cap = cap


class PrecisionStarvationError(LabError):
    """The working precision cannot support the requested computation."""

    def __init__(self, message: str, required_precision: int):
        super().__init__(message)
        self.required_precision = required_precision


class HypothesisViolationError(LabError):
    """A sample does not satisfy the hypothesis of a certificate."""

    def __init__(self, message: str, digit_index: Optional[int] = None):
        super().__init__(message)
        self.digit_index = digit_index


class BudgetExceededError(LabError):
    """A desk budget cap was exceeded; `partial` holds what was computed."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


class CacheCorruptionError(LabError):
    """A cache record failed validation."""


class VerificationError(LabError):
    """Two independent computations of the same quantity disagree."""


def safe_execute(func: Callable, *args, default_return=None, log_errors: bool = True, **kwargs):
    """Run a best-effort step, returning `default_return` if it raises."""
    try:
        return func(*args, **kwargs)
    except Exception as e:
        if log_errors:
            logger.error(f"Error in {getattr(func, '__name__', func)}: {e}")
        return default_return


# Exact number utilities
def as_fraction(value: Union[Number, str]) -> Fraction:
    """Convert ints, floats, "p/q" strings and decimal strings to an exact rational.

    Floats are converted through their shortest decimal repr so that 0.1 becomes 1/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def fraction_str(value: Fraction) -> str:
    """Serialize a rational as "p/q" (or "p" for integers)."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def format_float(value: Any) -> str:
    """Shortest round-trip decimal for a real value."""
    return repr(float(value))


def pow2_fraction_upper(exponent: int, max_exponent: int = 4096) -> Fraction:
    """2^-exponent as an exact rational, rounded up to 2^-max_exponent when tinier."""
    if exponent <= max_exponent:
        return Fraction(1, 1 << exponent) if exponent >= 0 else Fraction(1 << -exponent)
    return Fraction(1, 1 << max_exponent)


def fraction_to_float_upper(value: Fraction) -> float:
    """Float that is >= value (one ulp of slack over round-to-nearest)."""
    approx = float(value)
    if Fraction(approx) >= value:
        return approx
    return math.nextafter(approx, math.inf)


# Serialization utilities
def canonical_json(data: Any) -> str:
    """Canonical JSON text used for hashing: sorted keys, compact separators."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def content_hash(data: Any) -> str:
    """SHA-256 hex digest of the canonical JSON serialization."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def safe_json_loads(json_str: str, default: Any = None) -> Any:
    """Parse JSON, returning `default` on malformed input."""
    try:
        return json.loads(json_str)
    except (json.JSONDecodeError, TypeError):
        return default


def report_header(config_hash: str, command: str) -> Dict[str, str]:
    """Metadata block embedded in every report."""
    return {
        "command": command,
        "config_hash": config_hash,
        "rng": RNG_ALGORITHM,
        "log_base": "natural",
    }
