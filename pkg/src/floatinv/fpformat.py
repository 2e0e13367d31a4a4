"""Floating-point formats and exact rounding of rational constants."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class FloatFormat:
    name: str
    eps: Fraction
    delta: Fraction
    rounding: str = "nearest"

    @property
    def dtype(self):
        return np.float32 if self.name == "f32" else np.float64

    def round(self, q: Fraction) -> Fraction:
        return round_to_format(q, self.name)


_PARAMS = {"f32": (24, 150), "f64": (53, 1075)}


def float_format(name: str = "f32", rounding: str = "nearest") -> FloatFormat:
    if name not in _PARAMS:
        raise ValueError(f"unknown format {name!r}")
    if rounding not in ("nearest", "any"):
        raise ValueError(f"unknown rounding mode {rounding!r}")
    p, q = _PARAMS[name]
    if rounding == "any":
        p, q = p - 1, q - 1
    return FloatFormat(name, Fraction(1, 2 ** p), Fraction(1, 2 ** q), rounding)


F32 = float_format("f32")
F64 = float_format("f64")


def round_to_format(q: Fraction, name: str = "f32") -> Fraction:
    """Nearest representable value (ties to even), computed exactly."""
    q = Fraction(q)
    if name == "f64":
        # int / int true division is correctly rounded in CPython
        return Fraction(q.numerator / q.denominator)
    if name != "f32":
        raise ValueError(f"unknown format {name!r}")
    guess = np.float32(q.numerator / q.denominator)
    if not np.isfinite(guess):
        raise OverflowError(f"constant {q} overflows f32")
    cands = {guess, np.nextafter(guess, np.float32(np.inf)), np.nextafter(guess, np.float32(-np.inf))}
    best = None
    for c in cands:
        if not np.isfinite(c):
            continue
        dist = abs(Fraction(float(c)) - q)
        even = int(np.float32(c).view(np.uint32)) % 2 == 0
        key = (dist, not even)
        if best is None or key < best[0]:
            best = (key, c)
    return Fraction(float(best[1]))
