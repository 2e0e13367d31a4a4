import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floatinv.interval import Interval, IntervalError, eval_poly
from floatinv.poly import Poly

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def intervals_with_point(draw):
    a, b = sorted((draw(finite), draw(finite)))
    t = draw(st.floats(0, 1))
    x = Fraction(a) + (Fraction(b) - Fraction(a)) * Fraction(t)
    return Interval(a, b), x


def _contains_exact(iv: Interval, q: Fraction) -> bool:
    lo_ok = iv.lo == -math.inf or Fraction(iv.lo) <= q
    hi_ok = iv.hi == math.inf or q <= Fraction(iv.hi)
    return lo_ok and hi_ok


@given(intervals_with_point(), intervals_with_point())
@settings(max_examples=200, deadline=None)
def test_arithmetic_is_sound(p, q):
    (a, x), (b, y) = p, q
    assert _contains_exact(a + b, x + y)
    assert _contains_exact(a - b, x - y)
    assert _contains_exact(a * b, x * y)
    if not (b.lo <= 0 <= b.hi):
        assert _contains_exact(a / b, x / y)


@given(intervals_with_point(), st.integers(0, 7))
@settings(max_examples=150, deadline=None)
def test_power_is_sound(p, k):
    a, x = p
    assert _contains_exact(a ** k, x ** k)


def test_division_by_zero_interval():
    with pytest.raises(IntervalError):
        Interval(1.0, 2.0) / Interval(-1.0, 1.0)


def test_even_power_is_nonnegative():
    r = Interval(-2.0, 3.0) ** 2
    assert -1e-300 < r.lo <= 0 and 9 <= r.hi < 9 + 1e-12


def test_eval_poly_encloses_values():
    p = Poly.var("x") ** 2 - 3 * Poly.var("x") * Poly.var("y") + 1
    env = {"x": Interval(-1.0, 2.0), "y": Interval(0.5, 1.0)}
    r = eval_poly(p, env)
    for x in (-1, 0, 0.5, 2):
        for y in (0.5, 0.75, 1):
            v = p.evaluate({"x": Fraction(x), "y": Fraction(y)})
            assert r.lo <= v <= r.hi
