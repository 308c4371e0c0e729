"""Input checks shared by the estimators and config loaders."""
from __future__ import annotations

import math
from numbers import Real
from typing import Iterable, Mapping, Sequence

from sklearn.utils.validation import check_scalar

__all__ = ["check_scalar", "check_records", "check_fractions", "check_weights"]


def check_records(records, required: Sequence[str] = ()) -> list:
    """Materialize ``records`` and make sure each exposes ``required`` fields."""
    if records is None:
        raise TypeError("records must be an iterable, got None")
    if isinstance(records, (str, bytes)):
        raise TypeError("records must be an iterable of records, not a string")
    out = list(records)
    if out and required:
        missing = [f for f in required if not hasattr(out[0], f)]
        if missing:
            raise ValueError(
                f"{type(out[0]).__name__} records lack required fields {missing}")
    return out


def check_fractions(fractions: Mapping, name: str, tol: float = 1e-9) -> dict:
    out = dict(fractions)
    if not out:
        raise ValueError(f"{name} must not be empty")
    for key, v in out.items():
        if not isinstance(v, Real) or not math.isfinite(v) or v < 0:
            raise ValueError(f"{name}[{key!r}] must be a finite non-negative number, got {v!r}")
    total = math.fsum(out.values())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 (got {total!r})")
    return out


def check_weights(weights: Iterable[float], name: str, length: int | None = None) -> list[float]:
    out = [float(w) for w in weights]
    if length is not None and len(out) != length:
        raise ValueError(f"{name} must have {length} entries, got {len(out)}")
    if any(not math.isfinite(w) or w < 0 for w in out):
        raise ValueError(f"{name} must be finite and non-negative")
    if not any(w > 0 for w in out):
        raise ValueError(f"{name} must not be all zero")
    return out
