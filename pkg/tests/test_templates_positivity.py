import math
import re
from fractions import Fraction

import numpy as np
import pytest

from floatinv import F32, loop_cfg, lp_solve, parse_file, parse_lp, parse_program
from floatinv.coarse import coarse_invariant
from floatinv.fpmodel import transition_error_bound
from floatinv.poly import Poly, mono_str
from floatinv.positivity import assemble, enumerate_products, match_coefficients
from floatinv.solve import build_instance, to_lp, verify_solution
from floatinv.terms import to_poly
from floatinv.templates import (
    Implication, SolveConfig, Template, _linear_bounds, consecution_r1, consecution_r2, initiation,
    make_template, range_constraints,
)

X, I = Poly.var("x"), Poly.var("i")
EX1_BOX = {"x": (Fraction(-10), Fraction(10)), "i": (Fraction(-1), Fraction(1))}


@pytest.fixture(scope="module")
def ex1():
    from conftest import BENCH

    prog = parse_file(BENCH / "ex1.prog")
    cfg = loop_cfg(prog)
    tmpl = make_template({"l0": ["i", "x"]}, 2)
    (t,) = cfg.transitions
    return prog, cfg, tmpl, t


def test_template_basis(ex1):
    _, _, tmpl, _ = ex1
    assert sorted(mono_str(m) for m in tmpl.basis("l0")) == sorted(["1", "x", "i", "x^2", "i*x", "i^2"])
    assert len(tmpl.unknowns()) == 6


def test_ex1_initiation(ex1):
    _, cfg, tmpl, _ = ex1
    c = initiation(tmpl, cfg.init, "l0")
    assert set(c.premises) == {X, -X, 1 + I, 1 - I}
    assert c.conclusion == tmpl.eta("l0")
    assert re.fullmatch(r"\[.* >= 0(, .* >= 0)*\] => .* >= 0", str(c))


def test_ex1_consecution_r2(ex1):
    _, _, tmpl, t = ex1
    gamma = transition_error_bound({"x": t.term_for("x")}, EX1_BOX, F32)
    g = gamma["x"]
    c = consecution_r2(tmpl, t, gamma, EX1_BOX, [], SolveConfig())
    r = Poly.var("r_x")
    assert g - r in c.premises and g + r in c.premises
    assert 10 - X in c.premises and 1 + I in c.premises
    # with r_x = 0 the conclusion is eta(F(x), i) - bar * eta(x, i)
    f = to_poly(t.term_for("x"))
    eta = tmpl.eta("l0")
    want = eta.subs({"x": f}) - eta * Fraction(1, 10)
    assert c.conclusion.subs({"r_x": Poly()}) == want


def test_ex1_consecution_r1(ex1):
    _, _, tmpl, t = ex1
    gamma = transition_error_bound({"x": t.term_for("x")}, EX1_BOX, F32)
    c = consecution_r1(tmpl, t, gamma, EX1_BOX, [], SolveConfig(relax="r1"))
    eta = tmpl.eta("l0")
    assert c.conclusion == eta.rename({"x": "x'"}) - eta * Fraction(1, 10)
    dev = Poly.var("x'") - to_poly(t.term_for("x"))
    assert gamma["x"] - dev in c.premises and gamma["x"] + dev in c.premises


def test_rounding_free_self_loop():
    prog = parse_program("#precondition: 0 <= n && n <= 3\nint n;\nwhile (True) { n = n; }")
    cfg = loop_cfg(prog)
    (t,) = cfg.transitions
    tmpl = make_template({"l0": ["n"]}, 2)
    gamma = transition_error_bound({"n": t.term_for("n")}, {"n": (Fraction(0), Fraction(3))}, F32)
    assert gamma["n"] == 0
    for cons in (consecution_r1, consecution_r2):
        c = cons(tmpl, t, gamma, {"n": (Fraction(0), Fraction(3))}, [], SolveConfig(bar=Fraction(1)))
        # eta(n') - eta(n) with n' = n exactly
        assert c.conclusion.is_zero()


def test_algorithm_b_premises(ex1):
    _, _, tmpl, t = ex1
    gamma = transition_error_bound({"x": t.term_for("x")}, None, F32)
    assert gamma.symbolic and gamma["x"].variables() <= {"x_abs", "i_abs"}
    c = consecution_r2(tmpl, t, gamma, None, [], SolveConfig(algorithm="B"))
    a = Poly.var("x_abs")
    for h in (a, X ** 2 - a ** 2, a ** 2 - X ** 2):
        assert h in c.premises


def test_sine_newton_division_is_cleared(bench_path):
    prog = parse_file(bench_path("sine_newton"))
    cfg = loop_cfg(prog)
    inv = coarse_invariant(prog, cfg, F32, ["i", "x"])
    inst = build_instance(cfg, SolveConfig(relax="r1", degree=4, m=4), "x", inv)
    cons = [c for c in inst.constraints if c.kind == "consecution"]
    assert cons
    for c in cons:
        for h in c.premises:
            assert isinstance(h, Poly)
    # the deviation premise is multiplied through by qx (degree 6)
    assert max(h.degree() for h in cons[0].premises) >= 6


def test_range_constraints_shape():
    tmpl = make_template({"l0": ["x"]}, 1)
    up, low = range_constraints(tmpl, "l0", "x", Fraction(3), Fraction(-2), Fraction(1, 100))
    neg = -tmpl.eta("l0") - Fraction(1, 100)
    assert up.premises == (X - 3,) and up.conclusion == neg
    assert low.premises == (-2 - X,) and low.conclusion == neg


# -- positivity -----------------------------------------------------------------------


def test_product_counts():
    theta = [X, I, 1 - X, Poly.var("y")]
    assert len(enumerate_products(theta, 2)) == 15
    for k in range(1, 5):
        assert len(enumerate_products(theta[:k], 1)) == 1 + k
    basis = enumerate_products(theta, 3)
    assert basis.products[0] == Poly.const(1)
    assert all(len(f) <= 3 for f in basis.factors)
    assert len(basis) == math.comb(4 + 3, 3)


def test_products_deduplicate():
    # x * x and (x^2) collide syntactically
    basis = enumerate_products([X, X ** 2], 2)
    assert len(basis) < math.comb(2 + 2, 2)
    assert len(set(basis.products)) == len(basis)


def test_ex1_initiation_rows(ex1):
    _, cfg, tmpl, _ = ex1
    c = initiation(tmpl, cfg.init, "l0")
    basis = enumerate_products(list(c.premises) + [Poly.const(1), X ** 2, I ** 2], 2, 2)
    system = match_coefficients(c, basis)
    assert len(system.rows) == 6
    assert system.term_size == len(basis)


def test_trivial_witness():
    c = Implication("t", (X,), X)
    system = match_coefficients(c, enumerate_products([X], 1))
    out = lp_solve(to_lp(system, Template(0, ()), 1))
    assert out.ok
    values = {v: Fraction(round(out.values[v])) for v in system.nonneg}
    assert sorted(values.values()) == [0, 1]
    assert verify_solution(system, values).accepted


def test_lambda_only_monomial_row():
    c = Implication("t", (X, I), Poly.const(1))
    system = match_coefficients(c, enumerate_products([X, I], 2))
    row = next(r for r, rhs in system.rows if all(v.startswith("lam") for v in r) and rhs == 0
               and len(r) == 1)
    assert list(row.values()) == [1]


def test_single_constraint_term_size():
    c = Implication("t", (X, 1 - X), X * (1 - X))
    system = assemble([c], 2)
    assert system.term_size == math.comb(2 + 2, 2)


def test_dump_roundtrip(ex1):
    _, cfg, tmpl, _ = ex1
    system = assemble([initiation(tmpl, cfg.init, "l0")], 2)
    prob = parse_lp(system.dump())
    assert len(prob.rows) == len(system.rows)
    for (r1, b1), (r2, b2) in zip(prob.rows, system.rows):
        assert r1 == r2 and b1 == b2
    assert all(prob.lower[v] == 0 for v in system.nonneg)


def _sample_premise_points(c, n, rng):
    names = sorted(c.variables())
    lo_hi = {}
    for v in names:
        lo, hi = _linear_bounds(c.premises, v)
        lo_hi[v] = (float(lo) if lo is not None else -20.0, float(hi) if hi is not None else 20.0)
    env = {v: rng.uniform(a, b, n) if a < b else np.full(n, a) for v, (a, b) in lo_hi.items()}
    ok = np.ones(n, dtype=bool)
    for h in c.premises:
        ok &= np.asarray(h.map_coeffs(float).evaluate(env)) >= 0
    return {v: e[ok] for v, e in env.items()}


def test_certificates_are_sound_by_sampling(ex1):
    from floatinv.pipeline import RunOptions, synthesize

    prog, cfg, _, _ = ex1
    sol = synthesize(prog, RunOptions(samples=0))
    rng = np.random.default_rng(2)
    checked = 0
    for cert in sol.system.certificates:
        c = cert.constraint
        p = c.conclusion.instantiate(sol.values).map_coeffs(float)
        env = _sample_premise_points(c, 10_000, rng)
        if not len(next(iter(env.values()))):
            continue
        assert np.min(p.evaluate(env)) >= -1e-9, c.label
        checked += 1
    assert checked >= 3
