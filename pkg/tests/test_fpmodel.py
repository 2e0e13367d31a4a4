from fractions import Fraction

import numpy as np
import pytest
import sympy

from floatinv import F32, F64, const_error_bound, loop_cfg, parse_file, parse_program, symbolic_error_bound
from floatinv.fpmodel import abstract, err_names, eval_with_errors, interval_eval, partials_at_zero
from floatinv.terms import eval_term, rounding_ops

EX1_BOX = {"x": (Fraction(-10), Fraction(10)), "i": (Fraction(-1), Fraction(1))}


def body(name, bench_path, var="x"):
    cfg = loop_cfg(parse_file(bench_path(name)))
    (t,) = [t for t in cfg.transitions if t.update]
    return t, t.term_for(var)


def update_term(expr, pre="-2 <= x && x <= 2 && -2 <= y && y <= 2"):
    prog = parse_program(f"#precondition: {pre}\nfloat x;\nfloat y;\nwhile (True) {{ x = {expr}; }}")
    (t,) = loop_cfg(prog).transitions
    return t.term_for("x")


def _rat(v):
    return sympy.Rational(v.numerator, v.denominator)


def sympy_hat(term):
    """f_hat with symbolic error variables, built independently of the model."""
    syms = {}

    def on_op(node, v):
        if not node.rounds:
            return v
        e, d = err_names(node.site)
        se = syms.setdefault(e, sympy.Symbol(e))
        sd = syms.setdefault(d, sympy.Symbol(d))
        return v * (1 + se) + sd

    env = {v: sympy.Symbol(v) for v in ("x", "y", "i")}
    return eval_term(term, env, on_op, _rat), syms


@pytest.mark.parametrize("expr", ["x * y + 0.3 * x", "(x - y) * (x + y) - 1.5", "x / (y * y + 1)",
                                  "x * x * x - 2 * y"])
def test_partials_match_sympy(expr):
    t = update_term(expr)
    hat, syms = sympy_hat(t)
    grads = partials_at_zero(t)
    assert set(grads) == set(syms)
    zero = {s: 0 for s in syms.values()}
    pt = {"x": Fraction(3, 7), "y": Fraction(-5, 4)}
    for k, rf in grads.items():
        want = sympy.diff(hat, syms[k]).subs(zero).subs({sympy.Symbol(v): _rat(q) for v, q in pt.items()})
        got = rf.num.evaluate(pt) / rf.den.evaluate(pt)
        assert sympy.Rational(got.numerator, got.denominator) == sympy.nsimplify(want)


def test_partials_match_finite_differences():
    t = update_term("(x - y) * x / (y * y + 2)")
    grads = partials_at_zero(t)
    env = {"x": 0.7, "y": -1.3}
    h = 1e-6
    for k, rf in grads.items():
        site = int(k[1:])
        plus = eval_with_errors(t, env, {site: (h, 0.0) if k[0] == "e" else (0.0, h)})
        minus = eval_with_errors(t, env, {site: (-h, 0.0) if k[0] == "e" else (0.0, -h)})
        fd = (plus - minus) / (2 * h)
        exact = float(rf.num.evaluate({"x": Fraction(0.7), "y": Fraction(-1.3)}) /
                      rf.den.evaluate({"x": Fraction(0.7), "y": Fraction(-1.3)}))
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-9)


def test_ex1_error_pairs(bench_path):
    t, term = body("ex1", bench_path)
    assert len(rounding_ops(term)) == 5
    assert len(abstract(dict(t.update)).sites) == 5


def test_ex1_gamma_against_example(bench_path):
    _, term = body("ex1", bench_path)
    g = const_error_bound(term, EX1_BOX, F32)
    # sound, and within 10x of the first-order estimate
    assert 1.847744e-6 <= g <= 1.847744e-5


def _exact_hat(term, env, errs):
    def on_op(node, v):
        if node.rounds and node.site in errs:
            e, d = errs[node.site]
            return v * (1 + e) + d
        return v

    return eval_term(term, env, on_op, Fraction)


def _sampled_errors(term, box, fmt, n, rng, corners=False):
    """Exact |f_hat - f| at random points with random (or extreme) errors."""
    sites = sorted({op.site for op in rounding_ops(term)})
    out = []
    for _ in range(n):
        env = {v: Fraction(rng.uniform(float(lo), float(hi))) for v, (lo, hi) in box.items()}
        if corners:
            errs = {s: (fmt.eps * int(rng.choice([-1, 1])), fmt.delta * int(rng.choice([-1, 1]))) for s in sites}
        else:
            errs = {s: (fmt.eps * Fraction(rng.uniform(-1, 1)), fmt.delta * Fraction(rng.uniform(-1, 1)))
                    for s in sites}
        out.append((env, abs(_exact_hat(term, env, errs) - _exact_hat(term, env, {}))))
    return out


BOXES = {
    "ex1": EX1_BOX,
    "sine_newton": {"x": (Fraction(-1), Fraction(1)), "i": (Fraction(0), Fraction(10))},
    "big_loop": {"x": (Fraction(-1, 1000), Fraction(1, 1000)), "u": (Fraction(-1, 10000), Fraction(1, 10000))},
}


@pytest.mark.parametrize("name", sorted(BOXES))
def test_constant_bound_is_sound_by_sampling(name, bench_path):
    _, term = body(name, bench_path)
    box = {v: b for v, b in BOXES[name].items()}
    g = const_error_bound(term, box, F32)
    rng = np.random.default_rng(5)
    for corners in (False, True):
        for _, err in _sampled_errors(term, box, F32, 300, rng, corners):
            assert err <= g


def test_symbolic_bound_is_sound_pointwise():
    term = update_term("1.5 * x * y - 0.7 * x + 0.2")
    sym = symbolic_error_bound(term, F32)
    assert sym.variables() <= {"x_abs", "y_abs"}
    assert all(c >= 0 for c in sym.terms.values())
    box = {"x": (Fraction(-4), Fraction(4)), "y": (Fraction(-3), Fraction(3))}
    rng = np.random.default_rng(1)
    for env, err in _sampled_errors(term, box, F32, 500, rng, corners=True):
        assert err <= sym.evaluate({"x_abs": abs(env["x"]), "y_abs": abs(env["y"])})
    # at the box corner the symbolic bound cannot beat the constant one by much
    corner = float(sym.evaluate({"x_abs": Fraction(4), "y_abs": Fraction(3)}))
    const = float(const_error_bound(term, box, F32))
    assert corner >= 0.5 * const


def test_rounding_free_updates_have_zero_bound():
    prog = parse_program("#precondition: 0 <= i && i <= 3\nint i;\nfloat x;\nwhile (i < 5) { x = x; i = i + 1; }")
    (t, _) = loop_cfg(prog).outgoing("l0")
    box = {"x": (Fraction(-1), Fraction(1)), "i": (Fraction(0), Fraction(5))}
    assert const_error_bound(t.term_for("x"), box, F32) == 0
    assert const_error_bound(t.term_for("i"), box, F32) == 0
    assert symbolic_error_bound(t.term_for("i"), F32).is_zero()


def test_double_precision_is_tighter(bench_path):
    _, term = body("ex1", bench_path)
    assert const_error_bound(term, EX1_BOX, F64) < const_error_bound(term, EX1_BOX, F32) * 1e-8


def test_qx_enclosure_is_positive():
    # 1 - x^2/2 + x^4/24 + x^6/720 has minimum 0.5431 on [-1, 1]
    prog = parse_program("#precondition: -1 <= x && x <= 1\nfloat x;\nfloat q;\n"
                         "q = 1 - (x^2)/2 + (x^4)/24 + (x^6)/720;")
    (t,) = [t for t in loop_cfg(prog).transitions if t.update]
    iv = interval_eval(t.term_for("q"), {"x": (Fraction(-1), Fraction(1))}, depth=4)
    grid = np.linspace(-1, 1, 20001)
    true_min = np.min(1 - grid ** 2 / 2 + grid ** 4 / 24 + grid ** 6 / 720)
    assert 0.49 <= iv.lo <= true_min
    assert iv.hi >= 1


def test_symbolic_bound_rejects_division():
    with pytest.raises(ValueError):
        symbolic_error_bound(update_term("x / (y * y + 1)"), F32)
