"""Acceptance criteria 1-10.

Each test carries a ``criterion`` mark; conftest prints one PASS/FAIL line
per criterion at the end of the session.
"""

import math
import random
from fractions import Fraction
from itertools import product

import pytest

from floatinv import F32, loop_cfg, lp_solve, parse_file, parse_program
from floatinv.fpmodel import const_error_bound
from floatinv.pipeline import RunOptions, reverify, run, synthesize
from floatinv.poly import Poly, monomials_upto
from floatinv.positivity import enumerate_products, match_coefficients
from floatinv.solve import Prober, to_lp, verify_solution
from floatinv.templates import Implication, Template

A_R2_S2 = dict(algorithm="A", relax="r2", strategy="s2", degree=2, m=2,
               bar=Fraction(1, 10), a=Fraction(1, 10000), fmt="f32")
CONFIGS = {
    "ex1": A_R2_S2,
    "ex2": A_R2_S2,
    "big_loop": A_R2_S2,
    # the S1 column pairs with the R1 relaxation
    "sine_newton": dict(A_R2_S2, relax="r1", strategy="s1", degree=4, m=4),
}
LIMITS = {"ex1": 120, "ex2": 120, "big_loop": 60, "sine_newton": 600}


@pytest.fixture(scope="module")
def reports():
    from conftest import BENCH

    out = {}
    for name, kw in CONFIGS.items():
        out[name] = run(BENCH / f"{name}.prog", RunOptions(**kw))
    return out


def _ok(report, limit):
    assert report.status == "OK", report.message
    assert report.wall_time <= limit


@pytest.mark.criterion(1, "ex1 A/R2/S2 d=2 m=2: width <= 18.0 within 120 s")
def test_c1_ex1(reports):
    r = reports["ex1"]
    _ok(r, LIMITS["ex1"])
    assert r.width <= 18.0


@pytest.mark.criterion(2, "ex2 same config: width <= 2.5 within 120 s")
def test_c2_ex2(reports):
    r = reports["ex2"]
    _ok(r, LIMITS["ex2"])
    assert r.width <= 2.5


@pytest.mark.criterion(3, "SineNewton(10 iter) d=4 m=4: width <= 2.0 within 600 s, qx cleared")
def test_c3_sine_newton(reports, bench_path):
    r = reports["sine_newton"]
    _ok(r, LIMITS["sine_newton"])
    assert r.width <= 2.0
    # the only denominator is qx, proven positive on the coarse box
    from floatinv.fpmodel import interval_eval

    cfg = loop_cfg(parse_file(bench_path("sine_newton")))
    dens = [d for t in cfg.transitions for d in t.denominators()]
    assert dens
    box = {"x": (Fraction(-1), Fraction(1))}
    for d in dens:
        assert float(interval_eval(d, box, depth=4).lo) > 0


@pytest.mark.criterion(4, "bigLoop: width < 0.001 within 60 s")
def test_c4_big_loop(reports):
    r = reports["big_loop"]
    _ok(r, LIMITS["big_loop"])
    assert r.width < 0.001


def _body_term(name, bench_path, var="x"):
    cfg = loop_cfg(parse_file(bench_path(name)))
    (t,) = [t for t in cfg.transitions if t.update]
    return t.term_for(var)


@pytest.mark.criterion(5, "error-bound sanity: ex1, SineNewton ranges; rounding-free update gives 0")
def test_c5_error_bounds(bench_path):
    box = {"x": (Fraction(-10), Fraction(10)), "i": (Fraction(-1), Fraction(1))}
    g = const_error_bound(_body_term("ex1", bench_path), box, F32)
    assert 1.8e-6 <= g <= 2e-5
    box = {"x": (Fraction(-1), Fraction(1)), "i": (Fraction(0), Fraction(10))}
    g = const_error_bound(_body_term("sine_newton", bench_path), box, F32)
    assert 7.1e-7 <= g <= 7.2e-6
    prog = parse_program("#precondition: -3 <= x && x <= 3\nint i = 0;\nfloat x;\nwhile (i < 5) { x = x; i = i + 1; }")
    (t,) = [t for t in loop_cfg(prog).transitions if t.update]
    box = {"x": (Fraction(-3), Fraction(3)), "i": (Fraction(0), Fraction(5))}
    for v in ("x", "i"):
        assert const_error_bound(t.term_for(v), box, F32) == 0


@pytest.mark.criterion(6, "verification gate on every accepted solution")
def test_c6_verification_gate(reports, bench_path):
    for name, r in reports.items():
        if r.status != "OK":
            continue
        assert r.residual <= 1e-6, name
        assert r.min_lambda >= -1e-9, name
        lo, hi = r.coarse[r.target]
        assert lo <= r.low and r.up <= hi, name
        # independent re-derivation from the report's exact data
        assert reverify(r, bench_path(name)).accepted, name
    assert any(r.status == "OK" for r in reports.values())


@pytest.mark.criterion(7, "dynamic inductiveness: 1e5 sampled transitions, zero violations")
def test_c7_dynamic(reports):
    for name, r in reports.items():
        if r.status != "OK":
            continue
        assert r.samples >= 100_000, name
        assert r.violations == 0 and r.range_violations == 0, name


@pytest.fixture(scope="module")
def ex1_instance():
    from conftest import BENCH

    info = {}
    sol = synthesize(parse_file(BENCH / "ex1.prog"), RunOptions(**A_R2_S2), info=info)
    return info["instance"], sol


@pytest.mark.criterion(8, "S2 monotonicity on ex1: feasible at u implies feasible at u+1 (and dually)")
def test_c8_monotonicity(ex1_instance):
    inst, sol = ex1_instance
    prober = Prober(inst)
    rng = random.Random(8)
    lo, hi = inst.search
    seen_feasible = seen_infeasible = 0
    for _ in range(10):
        u = Fraction(rng.uniform(float(sol.up) - 3, float(sol.up) + 2)).limit_denominator(1000)
        if prober(u, lo).outcome.ok:
            seen_feasible += 1
            assert prober(u + 1, lo).outcome.ok
        else:
            seen_infeasible += 1
        l = Fraction(rng.uniform(float(sol.low) - 2, float(sol.low) + 3)).limit_denominator(1000)
        if prober(hi, l).outcome.ok:
            assert prober(hi, l - 1).outcome.ok
    # the sampled window straddles the optimum, so both outcomes occur
    assert seen_feasible and seen_infeasible


def _brute_monomials(n, d):
    return sum(1 for e in product(range(d + 1), repeat=n) if sum(e) <= d)


def _brute_products(k, m):
    seen = set()
    for size in range(m + 1):
        for combo in product(range(k), repeat=size):
            seen.add(tuple(sorted(combo)))
    return len(seen)


@pytest.mark.criterion(9, "combinatorics: C(|X|+d,d) monomials and C(k+m,m) products, all values <= 6")
def test_c9_combinatorics():
    for n in range(7):
        names = [f"x{j}" for j in range(n)]
        for d in range(7):
            got = len(monomials_upto(names, d))
            assert got == _brute_monomials(n, d) == math.comb(n + d, d)
    for k in range(1, 7):
        theta = [Poly.var(f"y{j}") for j in range(k)]
        for m in range(7):
            got = len(enumerate_products(theta, m))
            assert got == _brute_products(k, m) == math.comb(k + m, m)


def _random_certificate(rng):
    nv = rng.randint(1, 3)
    xs = [Poly.var(f"x{j}") for j in range(nv)]
    theta = []
    for _ in range(rng.randint(1, 4)):
        h = Poly.const(Fraction(rng.randint(-5, 5), rng.randint(1, 4)))
        for x in xs:
            h = h + x * Fraction(rng.randint(-5, 5), rng.randint(1, 4))
        theta.append(h)
    m = rng.randint(1, 3)
    basis = enumerate_products(theta, m)
    p = Poly()
    for g in basis.products:
        if rng.random() < 0.4:
            p = p + g * Fraction(rng.randint(0, 20), rng.randint(1, 7))
    return Implication("random", tuple(theta), p), basis


@pytest.mark.criterion(10, "certificate round-trip: 100 random certificates recovered")
def test_c10_roundtrip():
    rng = random.Random(10)
    empty = Template(0, ())
    for _ in range(100):
        c, basis = _random_certificate(rng)
        system = match_coefficients(c, basis)
        out = lp_solve(to_lp(system, empty, Fraction(1)))
        assert out.ok, out.message
        v = verify_solution(system, out.values)
        if not v.accepted:
            from floatinv.solve import polish

            fixed = polish(system, out.values, [])
            assert fixed is not None
            v = verify_solution(system, fixed)
        assert v.accepted
