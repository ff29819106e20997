"""Numeric text formatting shared by every text-based file format.

Floats are serialized with 9 significant digits. Values quantized this
way survive a write-parse-write cycle byte for byte.
"""

from __future__ import annotations

import math

from vild.errors import DataFormatError

SIGNIFICANT_DIGITS = 9


def fmt_float(x: float) -> str:
    """Render a finite float with 9 significant digits."""
    v = float(x)
    if not math.isfinite(v):
        raise DataFormatError(f"cannot serialize non-finite float {v!r}")
    return format(v, ".9g")


def quantize_float(x: float) -> float:
    """Round a float to the value its serialized form parses back to."""
    return float(fmt_float(x))


def quantize_floats(obj):
    """Recursively quantize every float inside lists, tuples, and dicts."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        return quantize_float(obj)
    if isinstance(obj, dict):
        return {k: quantize_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [quantize_floats(v) for v in obj]
    return obj


def parse_float(text: str, what: str = "float") -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise DataFormatError(f"invalid {what}: {text!r}") from exc
    if not math.isfinite(v):
        raise DataFormatError(f"{what} must be finite, got {text!r}")
    return v


def parse_int(text: str, what: str = "integer") -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise DataFormatError(f"invalid {what}: {text!r}") from exc
