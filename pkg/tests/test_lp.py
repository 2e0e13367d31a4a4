from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from floatinv import LpProblem, lp_solve, parse_lp
from floatinv.lp import FEASIBLE, INFEASIBLE, OPTIMAL, UNBOUNDED, format_outcome, parse_outcome, solve_exact


def _one_var(rhs):
    prob = LpProblem()
    prob.add_var("lam1", Fraction(0), None)
    prob.rows.append(({"lam1": Fraction(1)}, Fraction(rhs)))
    return prob


def test_trivial_cases():
    for backend in ("highs", "exact"):
        out = lp_solve(_one_var(1), backend)
        assert out.status in (OPTIMAL, FEASIBLE)
        assert float(out.values["lam1"]) == 1
        assert lp_solve(_one_var(-1), backend).status == INFEASIBLE


def test_exact_backend_returns_rationals():
    prob = parse_lp("free c\n3*lam1 + 1*c = 1/3\nlam1 >= 0\n-1 <= c <= 0\nminimize: 1*lam1\n")
    out = solve_exact(prob)
    assert out.status == OPTIMAL
    assert all(isinstance(v, Fraction) for v in out.values.values())
    assert out.values["lam1"] == Fraction(1, 9)


def test_unbounded():
    prob = parse_lp("x >= 0\n1*x + -1*y = 0\ny >= 0\nminimize: -1*x\n")
    assert lp_solve(prob, "exact").status == UNBOUNDED


def test_outcome_text_roundtrip():
    out = solve_exact(parse_lp("a >= 0\nb >= 0\n1*a + 2*b = 3\n"))
    back = parse_outcome(format_outcome(out))
    assert back.status == out.status and back.values == out.values


@st.composite
def small_lps(draw):
    n = draw(st.integers(1, 4))
    names = [f"v{k}" for k in range(n)]
    prob = LpProblem()
    for v in names:
        kind = draw(st.sampled_from(["nonneg", "box", "free"]))
        if kind == "nonneg":
            prob.add_var(v, Fraction(0), None)
        elif kind == "box":
            prob.add_var(v, Fraction(-3), Fraction(3))
        else:
            prob.add_var(v)
    for _ in range(draw(st.integers(1, 3))):
        row = {v: Fraction(draw(st.integers(-4, 4))) for v in names}
        row = {v: c for v, c in row.items() if c}
        if row:
            prob.rows.append((row, Fraction(draw(st.integers(-5, 5)))))
    prob.objective = {v: Fraction(draw(st.integers(-2, 2))) for v in names}
    return prob


@given(small_lps())
@settings(max_examples=120, deadline=None)
def test_backends_agree(prob):
    a = lp_solve(prob, "highs")
    b = lp_solve(prob, "exact")
    if b.status == INFEASIBLE:
        assert a.status == INFEASIBLE
    elif b.status == OPTIMAL:
        assert a.status in (OPTIMAL, FEASIBLE)
        assert abs(float(a.objective) - float(b.objective)) < 1e-7
        for row, rhs in prob.rows:
            assert sum(c * b.values[v] for v, c in row.items()) == rhs
    # text format round-trip preserves the problem
    again = parse_lp(prob.dump())
    assert again.rows == prob.rows and again.lower == prob.lower and again.upper == prob.upper
