"""Rounding-error model.

Each rounding site ``s`` of an expression turns ``op(a, b)`` into
``op(a, b) * (1 + e_s) + d_s`` with ``|e_s| <= eps`` and ``|d_s| <= delta``.
The error of the whole expression is bounded by its first-order Taylor
expansion in the error variables plus a second-order remainder.

Bounds are computed by propagating a first-order error form through the
expression tree: a value, one coefficient per error variable (the exact
partial derivative at zero), and a nonnegative bound on everything of
order two and higher.  Coefficients are intervals over a box (constant
bounds, Algorithm A) or polynomials in the program variables (symbolic
bounds, Algorithm B).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .fpformat import FloatFormat
from .interval import Interval, IntervalError, bisect_box, eval_poly, frac_up
from .poly import Poly, RatFunc
from .terms import BinOp, Const, Neg, Term, Var, rounding_ops, term_vars, to_ratfunc

DEFAULT_DEPTH = 3


def err_names(site: int) -> tuple[str, str]:
    return f"e{site}", f"d{site}"


def abs_name(var: str) -> str:
    return f"{var}_abs"


@dataclass(frozen=True)
class AbstractedFunction:
    """Rounding-annotated update: one term per output, sites shared."""

    outputs: tuple  # ((var, Term), ...)
    sites: tuple

    @property
    def error_vars(self) -> list[str]:
        return [n for s in self.sites for n in err_names(s)]

    def exact(self) -> dict[str, RatFunc]:
        return {v: to_ratfunc(t) for v, t in self.outputs}


def abstract(update: Mapping[str, Term] | Term, fmt: FloatFormat | None = None) -> AbstractedFunction:
    """Collect the error-variable pairs of an update (sites come from the CFG)."""
    if not isinstance(update, Mapping):
        update = {"_": update}
    sites: set[int] = set()
    for t in update.values():
        for op in rounding_ops(t):
            if op.site is None:
                raise ValueError("rounding node without a site; build the CFG first")
            sites.add(op.site)
    return AbstractedFunction(tuple(update.items()), tuple(sorted(sites)))


def number_sites(t: Term) -> Term:
    """Assign sites 1..n to a standalone term (for direct API use)."""
    from itertools import count

    from .terms import map_sites

    fresh = count(1)
    seen: dict[int, int] = {}

    def assign(node):
        key = id(node)
        if key not in seen:
            seen[key] = next(fresh)
        return seen[key]

    return map_sites(t, assign)


# -- symbolic partial derivatives --------------------------------------------------


def partials_at_zero(t: Term) -> dict[str, RatFunc]:
    """Exact ``d f_hat / d e_s`` and ``d f_hat / d d_s`` at ``e = d = 0``.

    Forward-mode differentiation over the tree; repeated sites accumulate.
    Only error variables that occur are returned.
    """

    def walk(n: Term) -> tuple[RatFunc, dict[str, RatFunc]]:
        if isinstance(n, Var):
            return RatFunc(Poly.var(n.name)), {}
        if isinstance(n, Const):
            return RatFunc(Poly.const(n.value)), {}
        if isinstance(n, Neg):
            v, g = walk(n.arg)
            return -v, {k: -x for k, x in g.items()}
        va, ga = walk(n.left)
        vb, gb = walk(n.right)
        keys = list(dict.fromkeys(list(ga) + list(gb)))
        zero = RatFunc(Poly())
        if n.op in "+-":
            sign = 1 if n.op == "+" else -1
            v = va + vb if sign > 0 else va - vb
            g = {}
            for k in keys:
                da, db = ga.get(k, zero), gb.get(k, zero)
                g[k] = (da + db if sign > 0 else da - db).normalized()
        elif n.op == "*":
            v = va * vb
            g = {k: (ga.get(k, zero) * vb + va * gb.get(k, zero)).normalized() for k in keys}
        else:
            v = va / vb
            g = {}
            for k in keys:
                num = ga.get(k, zero) * vb - va * gb.get(k, zero)
                g[k] = (num / (vb * vb)).normalized()
        v = v.normalized()
        if n.rounds:
            e, d = err_names(n.site)
            g[e] = (g[e] + v).normalized() if e in g else v
            one = RatFunc(Poly.const(1))
            g[d] = (g[d] + one).normalized() if d in g else one
        return v, g

    _, grads = walk(t)
    return {k: v for k, v in grads.items() if not v.num.is_zero()}


# -- interval enclosures ------------------------------------------------------------


def interval_eval(expr, box: Mapping[str, tuple], depth: int = 0) -> Interval:
    """Sound enclosure of a Poly, RatFunc or Term over a box.

    With ``depth > 0`` the box is split uniformly and the pieces are hulled.
    Raises :class:`IntervalError` if a denominator may vanish.
    """
    names = sorted(box)
    env = bisect_box(box, depth, names) if depth else {v: Interval.of(*box[v]) for v in names}
    return _eval_batch(expr, env).total()


def _eval_batch(expr, env) -> Interval:
    if isinstance(expr, Poly):
        return eval_poly(expr, env)
    if isinstance(expr, RatFunc):
        num = eval_poly(expr.num, env)
        den = eval_poly(expr.den, env)
        return num / den
    return _FormEval(env, None).run(expr).val


# -- first-order error forms over intervals ----------------------------------------


def _up(x):
    return np.nextafter(x, np.inf)


def _uadd(a, b):
    return _up(np.add(a, b))


def _umul(a, b):
    return _up(np.multiply(a, b))


class _Form:
    """value + sum(coef_u * u) + [-rem, rem] over a batch of boxes."""

    __slots__ = ("val", "coefs", "rem", "sig")

    def __init__(self, val: Interval, coefs: dict, rem, sig=None):
        self.val = val
        self.coefs = coefs
        self.rem = rem
        # (var, exponent) when the exact value is a pure power of a variable
        self.sig = sig


class _FormEval:
    def __init__(self, env: Mapping[str, Interval], fmt: Optional[FloatFormat]):
        self.env = env
        self.fmt = fmt
        self.zero = np.zeros_like(next(iter(env.values())).lo, dtype=float) if env else 0.0

    def bound(self, name: str):
        if self.fmt is None:
            return 0.0
        return frac_up(self.fmt.eps if name[0] == "e" else self.fmt.delta)

    def first_order(self, f: _Form):
        total = self.zero
        for k, c in f.coefs.items():
            total = _uadd(total, _umul(c.mag(), self.bound(k)))
        return total

    def run(self, n: Term) -> _Form:
        if isinstance(n, Var):
            return _Form(self.env[n.name], {}, self.zero, (n.name, 1))
        if isinstance(n, Const):
            return _Form(Interval.point(n.value), {}, self.zero)
        if isinstance(n, Neg):
            a = self.run(n.arg)
            return _Form(-a.val, {k: -c for k, c in a.coefs.items()}, a.rem)
        a = self.run(n.left)
        b = self.run(n.right)
        if n.op in "+-":
            f = self._add(a, b, n.op == "-")
        elif n.op == "*":
            f = self._mul(a, b)
        else:
            f = self._div(a, b)
        if n.rounds and self.fmt is not None:
            f = self._round(f, n.site)
        return f

    def _add(self, a: _Form, b: _Form, sub: bool) -> _Form:
        val = a.val - b.val if sub else a.val + b.val
        coefs = dict(a.coefs)
        for k, c in b.coefs.items():
            c = -c if sub else c
            coefs[k] = coefs[k] + c if k in coefs else c
        return _Form(val, coefs, _uadd(a.rem, b.rem))

    def _mul(self, a: _Form, b: _Form) -> _Form:
        sig = None
        if a.sig and b.sig and a.sig[0] == b.sig[0]:
            sig = (a.sig[0], a.sig[1] + b.sig[1])
            val = self.env[sig[0]] ** sig[1]
        else:
            val = a.val * b.val
        coefs = {}
        for k, c in a.coefs.items():
            coefs[k] = c * b.val
        for k, c in b.coefs.items():
            term = a.val * c
            coefs[k] = coefs[k] + term if k in coefs else term
        rem = self.zero
        if a.coefs or b.coefs or np.any(a.rem) or np.any(b.rem):
            aa, ab = self.first_order(a), self.first_order(b)
            ma, mb = a.val.mag(), b.val.mag()
            rem = _umul(aa, ab)
            rem = _uadd(rem, _umul(a.rem, _uadd(_uadd(mb, ab), b.rem)))
            rem = _uadd(rem, _umul(b.rem, _uadd(ma, aa)))
        return _Form(val, coefs, rem, sig)

    def _div(self, a: _Form, b: _Form) -> _Form:
        b0 = b.val
        lo, hi = np.asarray(b0.lo), np.asarray(b0.hi)
        if np.any((lo <= 0) & (hi >= 0)):
            raise IntervalError("denominator interval contains zero")
        mig = np.minimum(np.abs(lo), np.abs(hi))
        inv = b0.reciprocal()
        inv2 = inv * inv
        coefs = {k: -(c * inv2) for k, c in b.coefs.items()}
        rem = self.zero
        if b.coefs or np.any(b.rem):
            t = _uadd(self.first_order(b), b.rem)
            margin = np.nextafter(mig - t, -np.inf)
            if np.any(margin <= 0):
                raise IntervalError("denominator may vanish under rounding")
            mig2 = np.nextafter(mig * mig, -np.inf)
            rem = _uadd(_up(b.rem / mig2), _up(_umul(t, t) / np.nextafter(mig2 * margin, -np.inf)))
        recip = _Form(inv, coefs, rem)
        return self._mul(a, recip)

    def _round(self, z: _Form, site: int) -> _Form:
        e, d = err_names(site)
        coefs = dict(z.coefs)
        coefs[e] = coefs[e] + z.val if e in coefs else z.val
        one = Interval(1.0)
        coefs[d] = coefs[d] + one if d in coefs else one
        extra = _umul(_uadd(self.first_order(z), z.rem), self.bound(e))
        return _Form(z.val, coefs, _uadd(z.rem, extra), z.sig)


@dataclass(frozen=True)
class ErrorReport:
    """Per-expression breakdown of a constant bound."""

    first_order: Fraction
    second_order: Fraction
    attribution: dict  # error var -> sup |partial| * bound

    @property
    def total(self) -> Fraction:
        return self.first_order + self.second_order


def error_report(t: Term, box: Mapping[str, tuple], fmt: FloatFormat, depth: int = DEFAULT_DEPTH,
                 max_boxes: int = 4096, exact_partials: bool = True) -> ErrorReport:
    """Constant bound with per-error-variable attribution.

    Each coefficient enclosure from the tree pass is intersected with an
    enclosure of the exact partial derivative in expanded form, which
    removes most dependency loss for polynomial updates.
    """
    if not rounding_ops(t):
        return ErrorReport(Fraction(0), Fraction(0), {})
    names = sorted(term_vars(t))
    sub = {v: box[v] for v in names}
    env = bisect_box(sub, depth, names, max_boxes) if names else {}
    ev = _FormEval(env, fmt)
    form = ev.run(t)
    partials = partials_at_zero(t) if exact_partials else {}
    attribution = {}
    total = ev.zero
    for k, c in form.coefs.items():
        mag = c.mag()
        if k in partials:
            try:
                mag = np.minimum(mag, _eval_batch(partials[k], env).mag())
            except IntervalError:
                pass
        contrib = _umul(mag, ev.bound(k))
        attribution[k] = Fraction(float(np.max(contrib)))
        total = _uadd(total, contrib)
    gamma = _uadd(total, form.rem)
    worst = int(np.argmax(gamma)) if np.ndim(gamma) else None
    pick = (lambda a: float(np.asarray(a).ravel()[worst])) if worst is not None else float
    return ErrorReport(Fraction(pick(total)), Fraction(pick(form.rem)), attribution)


def const_error_bound(t: Term, box: Mapping[str, tuple], fmt: FloatFormat,
                      depth: int = DEFAULT_DEPTH, max_boxes: int = 4096) -> Fraction:
    """Sound bound on ``|f_hat(x, e, d) - f(x)|`` for ``x`` in ``box``."""
    return error_report(t, box, fmt, depth, max_boxes).total


def second_order_bound(t: Term, box: Mapping[str, tuple] | None, fmt: FloatFormat, depth: int = 0):
    """Bound on the order >= 2 remainder alone (constant or symbolic)."""
    if box is None:
        return _sym_form(t, fmt).rem
    return error_report(t, box, fmt, depth).second_order


# -- symbolic bounds ---------------------------------------------------------------------


def abs_poly(p: Poly, bounds: Mapping[str, Fraction] | None = None) -> Poly:
    """Triangle-inequality majorant: ``|c * prod x^k| -> |c| * prod x_abs^k``.

    Variables listed in ``bounds`` (error variables) are replaced by their
    bound instead of an absolute-value variable.
    """
    bounds = bounds or {}
    acc: dict = {}
    for m, c in p.terms.items():
        coef = abs(c)
        mono = []
        for v, e in m:
            if v in bounds:
                coef *= bounds[v] ** e
            else:
                mono.append((abs_name(v), e))
        key = tuple(sorted(mono))
        acc[key] = acc.get(key, 0) + coef
    return Poly(acc)


class _SymForm:
    __slots__ = ("val", "coefs", "rem")

    def __init__(self, val: Poly, coefs: dict, rem: Poly):
        self.val = val
        self.coefs = coefs
        self.rem = rem


def _sym_form(t: Term, fmt: FloatFormat) -> _SymForm:
    def bound(k: str) -> Fraction:
        return fmt.eps if k[0] == "e" else fmt.delta

    def first(f: _SymForm) -> Poly:
        out = Poly()
        for k, c in f.coefs.items():
            out = out + abs_poly(c) * bound(k)
        return out

    def walk(n: Term) -> _SymForm:
        if isinstance(n, Var):
            return _SymForm(Poly.var(n.name), {}, Poly())
        if isinstance(n, Const):
            return _SymForm(Poly.const(n.value), {}, Poly())
        if isinstance(n, Neg):
            a = walk(n.arg)
            return _SymForm(-a.val, {k: -c for k, c in a.coefs.items()}, a.rem)
        if n.op == "/":
            raise ValueError("symbolic error bounds need division-free expressions")
        a, b = walk(n.left), walk(n.right)
        if n.op in "+-":
            sgn = 1 if n.op == "+" else -1
            coefs = dict(a.coefs)
            for k, c in b.coefs.items():
                coefs[k] = coefs.get(k, Poly()) + c * sgn
            f = _SymForm(a.val + b.val * sgn, coefs, a.rem + b.rem)
        else:
            coefs = {k: c * b.val for k, c in a.coefs.items()}
            for k, c in b.coefs.items():
                coefs[k] = coefs.get(k, Poly()) + a.val * c
            fa, fb = first(a), first(b)
            rem = fa * fb + a.rem * (abs_poly(b.val) + fb + b.rem) + b.rem * (abs_poly(a.val) + fa)
            f = _SymForm(a.val * b.val, coefs, rem)
        if n.rounds:
            e, d = err_names(n.site)
            coefs = dict(f.coefs)
            coefs[e] = coefs.get(e, Poly()) + f.val
            coefs[d] = coefs.get(d, Poly()) + 1
            f = _SymForm(f.val, coefs, f.rem + (first(f) + f.rem) * fmt.eps)
        return f

    return walk(t)


def symbolic_error_bound(t: Term, fmt: FloatFormat) -> Poly:
    """Polynomial in ``<var>_abs`` with nonnegative coefficients bounding
    ``|f_hat(x, e, d) - f(x)|`` for every x."""
    f = _sym_form(t, fmt)
    out = f.rem
    for k, c in f.coefs.items():
        out = out + abs_poly(c) * (fmt.eps if k[0] == "e" else fmt.delta)
    return out


# -- vector bounds ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorBound:
    """Per-output bounds: Fractions (constant) or Polys over ``*_abs``."""

    values: tuple  # ((var, bound), ...)
    symbolic: bool = False

    def __getitem__(self, var: str):
        return dict(self.values).get(var, Poly() if self.symbolic else Fraction(0))

    def as_dict(self) -> dict:
        return dict(self.values)


def transition_error_bound(update: Mapping[str, Term], box: Mapping[str, tuple] | None,
                           fmt: FloatFormat, depth: int = DEFAULT_DEPTH) -> ErrorBound:
    if box is None:
        return ErrorBound(tuple((v, symbolic_error_bound(t, fmt)) for v, t in update.items()), True)
    return ErrorBound(tuple((v, const_error_bound(t, box, fmt, depth)) for v, t in update.items()))


# -- evaluation with explicit error values ------------------------------------------------


def eval_with_errors(t: Term, env: Mapping[str, object], errs: Mapping[int, tuple]):
    """Evaluate ``f_hat`` with given ``(e_s, d_s)`` per site (floats or arrays)."""
    from .terms import eval_term

    def on_op(node: BinOp, v):
        if node.rounds and node.site in errs:
            e, d = errs[node.site]
            return v * (1 + e) + d
        return v

    return eval_term(t, env, on_op)
