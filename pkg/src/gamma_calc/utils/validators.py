"""
Validators
Input parsing and validation for builder specs, field files and CLI lists.
"""

from __future__ import annotations

import math
import re
from typing import Iterable, Optional, Sequence

import numpy as np

from src.gamma_calc.core.errors import BuilderError, UsageError

_SPEC_PATTERN = re.compile(r"^\s*([A-Za-z_]+)\s*(?:[:(]\s*(.*?)\s*\)?\s*)?$")


def parse_builder_spec(spec: str) -> tuple[str, list[str]]:
    """Split ``"kind:a,b,c"`` (or ``"kind(a, b, c)"``) into kind and arguments."""
    if not isinstance(spec, str) or not spec.strip():
        raise BuilderError("empty builder spec")
    match = _SPEC_PATTERN.match(spec)
    if not match:
        raise BuilderError(f"malformed builder spec {spec!r}; expected kind:arg1,arg2,...")
    kind = match.group(1).lower()
    raw = match.group(2) or ""
    if kind in ("file", "from_file"):
        return kind, [raw] if raw else []
    args = [a.strip() for a in raw.split(",") if a.strip()]
    return kind, [_expand_pi(a) for a in args]


def _expand_pi(token: str) -> str:
    """Accept ``pi``, ``2pi`` and ``pi/2`` style angles in numeric slots."""
    t = token.lower().replace(" ", "")
    if "pi" not in t:
        return token
    m = re.fullmatch(r"([0-9.]*)\*?pi(?:/([0-9.]+))?", t)
    if not m:
        raise BuilderError(f"cannot parse angle {token!r}")
    factor = float(m.group(1)) if m.group(1) else 1.0
    divisor = float(m.group(2)) if m.group(2) else 1.0
    return repr(factor * math.pi / divisor)


def parse_int_list(text: str, *, minimum: int = 1, what: str = "list") -> list[int]:
    """Parse ``"8,16,32"`` into integers, each at least ``minimum``."""
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{what} must be comma-separated integers, got {text!r}") from exc
    if not values:
        raise UsageError(f"{what} is empty")
    if any(v < minimum for v in values):
        raise UsageError(f"{what} entries must be >= {minimum}, got {values}")
    return values


def parse_name_list(text: str, known: Iterable[str], *, what: str) -> list[str]:
    known_set = set(known)
    names = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [t for t in names if t not in known_set]
    if unknown:
        raise UsageError(f"unknown {what}: {unknown}; choose from {sorted(known_set)}")
    return names


def validate_field(values: Sequence[float] | np.ndarray, n: int, *, what: str = "field") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise UsageError(f"{what} must have length {n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{what} contains non-finite values")
    return arr


def validate_nonnegative(values: np.ndarray, *, what: str) -> np.ndarray:
    if np.any(values < 0):
        bad = np.flatnonzero(values < 0)
        raise UsageError(f"{what} must be nonnegative (negative at {bad[:10].tolist()})")
    return values


def validate_positive_real(value: float, *, what: str, allow_inf: bool = False) -> float:
    v = float(value)
    if math.isnan(v) or v < 0 or (math.isinf(v) and not allow_inf):
        raise UsageError(f"{what} must be a nonnegative real, got {value!r}")
    return v


def optional_float(text: Optional[str]) -> Optional[float]:
    if text is None:
        return None
    if text.lower() in ("inf", "infinity", "oo"):
        return math.inf
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"expected a number, got {text!r}") from exc
