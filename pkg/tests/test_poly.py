import math
from fractions import Fraction

import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from floatinv.poly import LinExpr, Poly, monomials_upto, parse_poly, poly_str

NAMES = ["x", "y", "z"]
coef = st.fractions(min_value=-50, max_value=50, max_denominator=12)


@st.composite
def polys(draw, max_terms=5, max_exp=3):
    p = Poly()
    for _ in range(draw(st.integers(0, max_terms))):
        mono = Poly.const(draw(coef))
        for v in NAMES:
            mono = mono * Poly.var(v) ** draw(st.integers(0, max_exp))
        p = p + mono
    return p


def to_sympy(p: Poly):
    syms = {v: sympy.Symbol(v) for v in NAMES}
    out = sympy.Integer(0)
    for mono, c in p.terms.items():
        t = sympy.Rational(c.numerator, c.denominator)
        for v, e in mono:
            t *= syms[v] ** e
        out += t
    return sympy.expand(out)


@given(polys(), polys())
@settings(max_examples=60, deadline=None)
def test_arithmetic_matches_sympy(p, q):
    assert sympy.expand(to_sympy(p * q) - to_sympy(p) * to_sympy(q)) == 0
    assert sympy.expand(to_sympy(p - q) - (to_sympy(p) - to_sympy(q))) == 0
    assert sympy.expand(to_sympy(p ** 2) - to_sympy(p) ** 2) == 0


@given(polys())
@settings(max_examples=100, deadline=None)
def test_parse_poly_roundtrip(p):
    assert parse_poly(poly_str(p)) == p


@given(polys(), st.fractions(-3, 3, max_denominator=5), st.fractions(-3, 3, max_denominator=5))
@settings(max_examples=60, deadline=None)
def test_subs_agrees_with_evaluation(p, a, b):
    q = p.subs({"x": Poly.var("y") + a})
    env = {"x": b + a, "y": b, "z": Fraction(2)}
    assert q.evaluate({"y": b, "z": Fraction(2)}) == p.evaluate(env)


def test_monomial_count_closed_form():
    for n in range(5):
        names = [f"v{k}" for k in range(n)]
        for d in range(5):
            monos = monomials_upto(names, d)
            assert len(monos) == math.comb(n + d, d)
            assert len(set(monos)) == len(monos)


def test_template_coefficients_are_affine():
    c = LinExpr.unknown("c0")
    p = Poly({(("x", 1),): c}) + Poly.var("x") * 3
    assert p.coeff((("x", 1),)).evaluate({"c0": 2}) == 5
    assert p.instantiate({"c0": Fraction(-3)}).is_zero()


def test_parse_examples():
    assert parse_poly("x^2 - 2*x*y + 1/3") == Poly.var("x") ** 2 - 2 * Poly.var("x") * Poly.var("y") + Fraction(1, 3)
    assert parse_poly("0").is_zero()
