"""Outward-rounded interval arithmetic.

Endpoints are floats or numpy arrays of floats, so one :class:`Interval`
can hold a whole batch of boxes (used for bisection).  Every operation
widens its result by one ulp in each direction, which keeps the enclosure
sound regardless of the rounding performed by numpy.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping

import numpy as np

from .poly import Poly

_NINF = -np.inf
_PINF = np.inf


def _down(x):
    return np.nextafter(x, _NINF)


def _up(x):
    return np.nextafter(x, _PINF)


def frac_down(q: Fraction) -> float:
    """Largest float <= q."""
    f = float(q)
    if Fraction(f) > q:
        f = float(np.nextafter(f, _NINF))
    return f


def frac_up(q: Fraction) -> float:
    """Smallest float >= q."""
    f = float(q)
    if Fraction(f) < q:
        f = float(np.nextafter(f, _PINF))
    return f


class IntervalError(ArithmeticError):
    """Raised when an operation has no bounded enclosure (e.g. x / [-1, 1])."""


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        if hi is None:
            hi = lo
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, q) -> "Interval":
        if isinstance(q, Fraction):
            return cls(frac_down(q), frac_up(q))
        return cls(float(q), float(q))

    @classmethod
    def of(cls, lo, hi) -> "Interval":
        lo = frac_down(Fraction(lo)) if not isinstance(lo, float) else lo
        hi = frac_up(Fraction(hi)) if not isinstance(hi, float) else hi
        return cls(lo, hi)

    def __add__(self, other) -> "Interval":
        other = _lift(other)
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    __radd__ = __add__

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other) -> "Interval":
        other = _lift(other)
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __rsub__(self, other) -> "Interval":
        return _lift(other) - self

    def __mul__(self, other) -> "Interval":
        other = _lift(other)
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        with np.errstate(invalid="ignore", over="ignore"):
            # 0 * inf (an overflowed reciprocal) stands for 0 * finite
            ps = tuple(np.nan_to_num(q, nan=0.0, posinf=np.inf, neginf=-np.inf)
                       for q in (a * c, a * d, b * c, b * d))
        lo = np.minimum(np.minimum(ps[0], ps[1]), np.minimum(ps[2], ps[3]))
        hi = np.maximum(np.maximum(ps[0], ps[1]), np.maximum(ps[2], ps[3]))
        return Interval(_down(lo), _up(hi))

    __rmul__ = __mul__

    def reciprocal(self) -> "Interval":
        if np.any((np.asarray(self.lo) <= 0) & (np.asarray(self.hi) >= 0)):
            raise IntervalError("denominator interval contains zero")
        return Interval(_down(1.0 / self.hi), _up(1.0 / self.lo))

    def __truediv__(self, other) -> "Interval":
        return self * _lift(other).reciprocal()

    def __rtruediv__(self, other) -> "Interval":
        return _lift(other) * self.reciprocal()

    def __pow__(self, k: int) -> "Interval":
        if k == 0:
            return Interval(np.ones_like(self.lo, dtype=float) if np.ndim(self.lo) else 1.0)
        if k == 1:
            return self
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        if k % 2 == 1:
            return Interval(_ipow(lo, k, False), _ipow(hi, k, True))
        mag = np.maximum(np.abs(lo), np.abs(hi))
        mig = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        res_lo, res_hi = _ipow(mig, k, False), _ipow(mag, k, True)
        if np.ndim(self.lo) == 0:
            return Interval(float(res_lo), float(res_hi))
        return Interval(res_lo, res_hi)

    def mag(self):
        """max |x| over the interval."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def abs(self) -> "Interval":
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        mig = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        return Interval(mig, self.mag())

    def hull(self, other: "Interval") -> "Interval":
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def contains(self, x) -> bool:
        return bool(np.all((self.lo <= x) & (x <= self.hi)))

    def width(self):
        return self.hi - self.lo

    def total(self) -> "Interval":
        """Collapse a batch into the hull of all its members."""
        return Interval(float(np.min(self.lo)), float(np.max(self.hi)))

    def __repr__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


def _ipow(x, k: int, upward: bool):
    """x**k with directed rounding for x >= 0 or odd k (monotone case)."""
    # for negative x with odd k the product sign alternates, so round the
    # magnitude the opposite way
    x = np.asarray(x, dtype=float)
    neg = x < 0
    mag = np.abs(x)
    rnd_mag_up = np.where(neg, not upward, upward)
    acc = mag
    for _ in range(k - 1):
        prod = acc * mag
        acc = np.where(rnd_mag_up, _up(prod), _down(prod))
    res = np.where(neg, -acc, acc)
    return res if res.ndim else float(res)


def _lift(x) -> Interval:
    if isinstance(x, Interval):
        return x
    if isinstance(x, Fraction):
        return Interval.point(x)
    return Interval(float(x), float(x))


Box = Mapping[str, tuple]  # name -> (lo, hi) as Fractions


def box_to_intervals(box: Box) -> dict[str, Interval]:
    return {v: Interval.of(lo, hi) for v, (lo, hi) in box.items()}


def bisect_box(box: Box, depth: int, names=None, max_boxes: int = 4096) -> dict[str, Interval]:
    """Split every coordinate of ``box`` into ``2**depth`` equal pieces.

    Returns a batched interval environment (numpy arrays over all
    sub-boxes).  The depth is reduced when the grid would exceed
    ``max_boxes`` cells.
    """
    names = list(names if names is not None else box.keys())
    split = [v for v in names if box[v][0] != box[v][1]]
    while depth > 0 and (2 ** depth) ** len(split) > max_boxes:
        depth -= 1
    pieces = 2 ** depth
    axes = []
    for v in split:
        lo, hi = box[v]
        cuts = [lo + (hi - lo) * Fraction(j, pieces) for j in range(pieces + 1)]
        los = np.array([frac_down(c) for c in cuts[:-1]])
        his = np.array([frac_up(c) for c in cuts[1:]])
        axes.append((los, his))
    env: dict[str, Interval] = {}
    if split:
        grids_lo = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        grids_hi = np.meshgrid(*[a[1] for a in axes], indexing="ij")
        for v, glo, ghi in zip(split, grids_lo, grids_hi):
            env[v] = Interval(glo.ravel(), ghi.ravel())
    for v in names:
        if v not in env:
            env[v] = Interval.of(*box[v])
    return env


def eval_poly(p: Poly, env: Mapping[str, Interval]) -> Interval:
    """Enclosure of a numeric polynomial, monomial by monomial."""
    total = Interval(0.0)
    powers: dict[tuple, Interval] = {}
    for m, c in p.terms.items():
        term = Interval.point(c)
        for v, e in m:
            key = (v, e)
            if key not in powers:
                powers[key] = env[v] ** e
            term = term * powers[key]
        total = total + term
    return total


def eval_poly_horner(p: Poly, env: Mapping[str, Interval], var: str) -> Interval:
    """Enclosure via Horner's scheme in one variable (tighter for univariate)."""
    groups: dict[int, Poly] = {}
    for m, c in p.terms.items():
        e = dict(m).get(var, 0)
        rest = tuple((v, k) for v, k in m if v != var)
        groups.setdefault(e, Poly())
        groups[e] = groups[e] + Poly({rest: c})
    top = max(groups, default=0)
    acc = eval_poly(groups.get(top, Poly()), env)
    x = env[var]
    for e in range(top - 1, -1, -1):
        acc = acc * x + eval_poly(groups.get(e, Poly()), env)
    return acc
