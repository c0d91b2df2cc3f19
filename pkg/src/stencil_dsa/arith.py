"""Element arithmetic with C semantics over numpy arrays.

Every backend (reference evaluation, the simulator, generated C) must agree on
these rules: wrapping integer arithmetic, truncating integer division, and
single-rounding IEEE operations in the stage's element type.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

DTYPES = {"int32": np.int32, "int64": np.int64, "float32": np.float32, "float64": np.float64}


def dtype_of(elem_type: str):
    return np.dtype(DTYPES[elem_type])


def constant(value: Fraction, elem_type: str):
    """A literal as the element type sees it (floats round once from the exact value)."""
    dt = dtype_of(elem_type)
    if dt.kind == "f":
        return dt.type(float(value))
    if value.denominator != 1:
        raise ValueError(f"non-integer constant {value} in {elem_type} stage")
    return dt.type(int(value))


def trunc_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C integer division; callers guarantee ``b`` has no zeros where it matters."""
    safe = np.where(b == 0, 1, b).astype(a.dtype)
    with np.errstate(over="ignore", divide="ignore"):
        q = a // safe
        fix = ((a % safe) != 0) & ((a < 0) != (safe < 0))
    return (q + fix.astype(a.dtype)).astype(a.dtype)


def apply(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if a.dtype.kind == "f":
            return a / b
        return trunc_div(a, b)


def scale(values: np.ndarray, weight: Fraction, elem_type: str) -> np.ndarray:
    """Multiply by an exact weight: ``v * p`` for integers, ``v / q`` for unit fractions."""
    with np.errstate(over="ignore"):
        if weight.denominator == 1:
            return values * constant(weight, elem_type)
        if weight.numerator == 1:
            return values / constant(Fraction(weight.denominator), elem_type)
        return values * constant(weight, elem_type)
