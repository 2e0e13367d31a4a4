"""Invariant templates and implication constraints.

Every constraint has the shape ``[h_1 >= 0, ..., h_k >= 0] => p >= 0`` with
numeric premises and a conclusion whose coefficients are affine in the
template unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .fpformat import F32, FloatFormat
from .frontend import Atom
from .interval import IntervalError
from .poly import LinExpr, Poly, RatFunc, monomials_upto, poly_str
from .terms import INT, Const, make_binop, to_ratfunc


@dataclass(frozen=True)
class SolveConfig:
    algorithm: str = "A"
    relax: str = "r2"
    degree: int = 2
    m: int = 2
    bar: Fraction = Fraction(1, 10)
    a: Fraction = Fraction(1, 10000)
    fmt: FloatFormat = F32
    depth: int = 3  # bisection depth for error bounds
    coef_bound: Fraction = Fraction(100)
    squares: bool = False  # add x^2 for every variable to the premise set
    degree_cap: Optional[int] = None  # None: max(conclusion, premise) degree
    post_box: bool = True  # R1: bound primed variables by the update image
    report_at: str = "head"  # or "end"

    def __post_init__(self):
        if self.algorithm not in ("A", "B"):
            raise ValueError("algorithm must be A or B")
        if self.relax not in ("r1", "r2"):
            raise ValueError("relax must be r1 or r2")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.bar <= 0 or self.a <= 0:
            raise ValueError("bar and a must be positive")
        if self.report_at not in ("head", "end"):
            raise ValueError("report_at must be head or end")


# -- templates -------------------------------------------------------------------


@dataclass(frozen=True)
class Template:
    """One polynomial with unknown coefficients per location."""

    degree: int
    bases: tuple  # ((loc, (vars...), (monomials...)), ...)

    def basis(self, loc: str) -> list:
        return list(dict((l, b) for l, _, b in self.bases)[loc])

    def variables(self, loc: str) -> list[str]:
        return list(dict((l, v) for l, v, _ in self.bases)[loc])

    @property
    def locations(self) -> list[str]:
        return [l for l, _, _ in self.bases]

    def unknown(self, loc: str, k: int) -> str:
        return f"c_{loc}_{k}"

    def unknowns(self) -> list[str]:
        return [self.unknown(l, k) for l, _, b in self.bases for k in range(len(b))]

    def eta(self, loc: str) -> Poly:
        return Poly({m: LinExpr.unknown(self.unknown(loc, k)) for k, m in enumerate(self.basis(loc))})

    def instantiate(self, loc: str, values: Mapping[str, Fraction]) -> Poly:
        return self.eta(loc).instantiate(values)


def make_template(variables: Mapping[str, Sequence[str]] | Sequence[str], degree: int) -> Template:
    """All monomials of degree <= ``degree`` over each location's variables."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if not isinstance(variables, Mapping):
        variables = {"l0": list(variables)}
    bases = tuple((loc, tuple(vs), tuple(monomials_upto(vs, degree))) for loc, vs in variables.items())
    return Template(degree, bases)


# -- implications ---------------------------------------------------------------------


@dataclass(frozen=True)
class Implication:
    label: str
    premises: tuple  # numeric Polys, each meaning h >= 0
    conclusion: Poly  # coefficients affine in unknowns
    kind: str = "other"

    def __str__(self) -> str:
        hs = ", ".join(f"{poly_str(h)} >= 0" for h in self.premises)
        return f"[{hs}] => {poly_str(self.conclusion)} >= 0"

    def variables(self) -> set[str]:
        out = set(self.conclusion.variables())
        for h in self.premises:
            out |= h.variables()
        return out


def _dedup(polys: Iterable[Poly]) -> tuple:
    out = []
    seen = set()
    for p in polys:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return tuple(out)


def atom_premise(a: Atom) -> RatFunc:
    """``left <= right`` (or ``<``) as ``right - left >= 0``; int strict
    atoms are tightened by one."""
    diff = to_ratfunc(a.right) - to_ratfunc(a.left)
    if a.rel == "<" and a.left.kind == INT and a.right.kind == INT:
        diff = diff - RatFunc(Poly.const(1))
    return diff.normalized()


def box_premises(box: Mapping[str, tuple], names: Iterable[str] | None = None) -> list[Poly]:
    out = []
    for v in names if names is not None else box:
        if v not in box:
            continue
        lo, hi = box[v]
        x = Poly.var(v)
        out.append(x - lo)
        out.append(hi - x)
    return out


class DivisionError(ValueError):
    pass


def sign_over(q: Poly, box: Mapping[str, tuple], depth: int = 4) -> int:
    """+1 / -1 when interval evaluation proves the sign of ``q`` on ``box``,
    0 otherwise."""
    from .fpmodel import interval_eval

    names = q.variables()
    if not names:
        c = q.constant_term()
        return (c > 0) - (c < 0)
    if any(v not in box for v in names):
        return 0
    try:
        enc = interval_eval(q, {v: box[v] for v in names}, depth)
    except IntervalError:
        return 0
    if enc.lo > 0:
        return 1
    if enc.hi < 0:
        return -1
    return 0


def clear_division(h: RatFunc, box: Mapping[str, tuple] | None = None) -> Poly:
    """``P / Q >= 0`` as a polynomial premise.

    With the sign of Q proven on ``box`` this is ``P >= 0`` or ``-P >= 0``;
    otherwise ``P * Q >= 0``.
    """
    if h.is_polynomial:
        return h.as_poly()
    sign = sign_over(h.den, box) if box is not None else 0
    if sign > 0:
        return h.num
    if sign < 0:
        return -h.num
    return h.num * h.den


def _subs_rat(p: Poly, mapping: Mapping[str, RatFunc], power: int) -> tuple[Poly, list]:
    """``p`` with variables replaced by rational functions, multiplied by
    ``D_j ** power`` for every distinct denominator ``D_j``.

    ``power`` must be at least the degree of ``p`` in the substituted
    variables.  Returns the cleared polynomial and the denominators.
    """
    dens: list[Poly] = []
    index: dict[str, int] = {}
    nums: dict[str, Poly] = {}
    for v, rf in mapping.items():
        nums[v] = rf.num
        if rf.is_polynomial:
            nums[v] = rf.as_poly()
            continue
        if rf.den not in dens:
            dens.append(rf.den)
        index[v] = dens.index(rf.den)
    acc = Poly()
    pow_cache: dict = {}

    def pw(base: Poly, e: int) -> Poly:
        key = (id(base), e)
        if key not in pow_cache:
            pow_cache[key] = (base, base ** e)
        return pow_cache[key][1]

    for mono, c in p.terms.items():
        used = [0] * len(dens)
        term = Poly.const(1)
        for v, e in mono:
            if v in nums:
                term = term * pw(nums[v], e)
                if v in index:
                    used[index[v]] += e
            else:
                term = term * Poly.var(v) ** e
        for j, d in enumerate(dens):
            if power - used[j] < 0:
                raise ValueError("clearing power below substituted degree")
            term = term * pw(d, power - used[j])
        acc = acc + term * Poly({(): c})
    return acc, dens


def _clearing_factor(dens: list, power: int, box) -> tuple[Poly, int]:
    """Product of ``D_j ** power`` and the sign that makes it positive.

    The sign is 0 when some odd power has an unknown sign.
    """
    prod = Poly.const(1)
    sign = 1
    for d in dens:
        prod = prod * d ** power
        if power % 2:
            s = sign_over(d, box) if box is not None else 0
            sign *= s
    return prod, sign


def _clear_power(degree: int, dens: list, box) -> int:
    """Smallest exponent >= ``degree`` giving a sign-definite factor."""
    if not dens or degree % 2 == 0:
        return degree
    if box is not None and all(sign_over(d, box) != 0 for d in dens):
        return degree
    return degree + 1


def guard_premises(guard, slack, box=None) -> list[Poly]:
    """Over-approximated guard atoms as premises.

    ``slack(term)`` bounds the rounding error of a guard side (a Fraction
    or a polynomial over ``*_abs`` variables).
    """
    from .cfg import overapprox_guard

    out = []
    for lhs, rhs, sl, sr in overapprox_guard(guard, slack):
        h = (to_ratfunc(rhs) - to_ratfunc(lhs)).normalized()
        extra = Poly.const(0)
        for s in (sl, sr):
            extra = extra + (s if isinstance(s, Poly) else Poly.const(s))
        if not extra.is_zero():
            h = (h + RatFunc(extra)).normalized()
        out.append(clear_division(h, box))
    return out


def abs_premises(names: Iterable[str], context: Sequence[Poly] = ()) -> list[Poly]:
    """``x_abs >= 0`` and ``x_abs^2 = x^2`` (as two inequalities), plus
    ``x_abs >= +-x`` and, when ``context`` bounds ``x`` on both sides by
    constants, ``M - x_abs >= 0``.  The extra atoms are consequences of
    ``x_abs = |x|`` that Handelman products cannot derive on their own."""
    from .fpmodel import abs_name

    out = []
    for v in names:
        x = Poly.var(v)
        a = Poly.var(abs_name(v))
        sq = x ** 2 - a ** 2
        out += [a, sq, -sq, a - x, a + x]
        lo, hi = _linear_bounds(context, v)
        if lo is not None and hi is not None:
            out.append(Poly.const(max(abs(lo), abs(hi))) - a)
    return out


def _linear_bounds(polys: Iterable[Poly], v: str) -> tuple:
    """Tightest constant bounds on ``v`` from atoms ``c*v + k >= 0``."""
    lo = hi = None
    for p in polys:
        if p.variables() != {v} or p.degree() != 1:
            continue
        c = p.coeff(((v, 1),))
        b = -p.constant_term() / c
        if c > 0:
            lo = b if lo is None else max(lo, b)
        else:
            hi = b if hi is None else min(hi, b)
    return lo, hi


def _abs_vars_of(polys: Iterable[Poly]) -> list[str]:
    from .fpmodel import abs_name

    seen: list[str] = []
    for p in polys:
        for v in sorted(p.variables()):
            if v.endswith("_abs") and v[:-4] not in seen:
                seen.append(v[:-4])
    return seen


def initiation(template: Template, init_atoms, loc: str) -> Implication:
    """Precondition implies the template at the initial location.

    Atoms over variables outside the location's template are dropped,
    which only weakens the premises.
    """
    names = set(template.variables(loc))
    prem = []
    for a in init_atoms:
        h = atom_premise(a)
        if not h.is_polynomial:
            h = RatFunc(clear_division(h))
        p = h.as_poly()
        if p.variables() <= names:
            prem.append(p)
    return Implication(f"init@{loc}", _dedup(prem), template.eta(loc), "initiation")


def _update_rat(t, v: str) -> RatFunc:
    return to_ratfunc(t.term_for(v)).normalized()


def consecution_r2(template: Template, t, gamma, box, guard_prem: Sequence[Poly],
                   cfg: SolveConfig, label: str = "") -> Implication:
    """Deviation-variable form: ``eta'(F(x) + r) - bar * eta(x) >= 0``
    under ``-gamma <= r <= gamma``; divisions cleared by a positive power
    of the common denominators."""
    src, tgt = t.source, t.target
    src_vars = template.variables(src)
    prem: list[Poly] = list(guard_prem)
    if box is not None:
        prem += box_premises(box, src_vars)
    mapping: dict[str, RatFunc] = {}
    for v in template.variables(tgt):
        rf = _update_rat(t, v)
        g = gamma[v] if v in gamma.as_dict() else 0
        g = g if isinstance(g, Poly) else Poly.const(g)
        if not g.is_zero():
            r = Poly.var(f"r_{v}")
            prem += [g - r, g + r]
            rf = RatFunc(rf.num + r * rf.den, rf.den)
        mapping[v] = rf
    if any(not rf.is_polynomial for rf in mapping.values()) and gamma.symbolic:
        raise DivisionError("symbolic error bounds need division-free updates")
    dens = []
    for rf in mapping.values():
        if not rf.is_polynomial and rf.den not in dens:
            dens.append(rf.den)
    power = _clear_power(template.degree, dens, box)
    post, dens = _subs_rat(template.eta(tgt), mapping, power)
    factor, sign = _clearing_factor(dens, power, box)
    concl = post - factor * template.eta(src) * cfg.bar
    if sign < 0:
        concl = -concl
    prem += abs_premises(_abs_vars_of(prem), prem)
    return Implication(label or f"cons-r2 {src}->{tgt}", _dedup(prem), concl, "consecution")


def consecution_r1(template: Template, t, gamma, box, guard_prem: Sequence[Poly],
                   cfg: SolveConfig, post_box: Mapping[str, tuple] | None = None,
                   label: str = "") -> Implication:
    """Primed-variable form: ``eta'(x') - bar * eta(x) >= 0`` under
    ``-gamma <= x' - F(x) <= gamma``.

    Rounding-free polynomial updates are substituted directly.  With
    ``post_box`` the primed variables are also bounded by the image of the
    update plus ``gamma``.
    """
    src, tgt = t.source, t.target
    prem: list[Poly] = list(guard_prem)
    if box is not None:
        prem += box_premises(box, template.variables(src))
    mapping: dict[str, Poly] = {}
    for v in template.variables(tgt):
        rf = _update_rat(t, v)
        g = gamma[v] if v in gamma.as_dict() else 0
        g = g if isinstance(g, Poly) else Poly.const(g)
        if g.is_zero() and rf.is_polynomial:
            mapping[v] = rf.as_poly()
            continue
        xp = Poly.var(f"{v}'")
        mapping[v] = xp
        if rf.is_polynomial:
            dev = xp - rf.as_poly()
            prem += [g - dev, g + dev]
        else:
            if gamma.symbolic:
                raise DivisionError("symbolic error bounds need division-free updates")
            dev = xp * rf.den - rf.num
            for h in (g * rf.den - dev, g * rf.den + dev):
                prem.append(clear_division(RatFunc(h, rf.den), box))
        if post_box is not None and v in post_box:
            lo, hi = post_box[v]
            if not isinstance(g, Poly) or g.degree() <= 0:
                gc = g.constant_term()
                prem += [xp - (lo - gc), (hi + gc) - xp]
    concl = template.eta(tgt).subs(mapping) - template.eta(src) * cfg.bar
    prem += abs_premises(_abs_vars_of(prem), prem)
    return Implication(label or f"cons-r1 {src}->{tgt}", _dedup(prem), concl, "consecution")


def range_constraints(template: Template, loc: str, target: str, up, low, a,
                      extra: Sequence[Poly] = ()) -> tuple[Implication, Implication]:
    """``x >= up => eta <= -a`` and ``x <= low => eta <= -a`` at ``loc``."""
    x = Poly.var(target)
    neg = -template.eta(loc) - a
    upper = Implication(f"range-up@{loc}", _dedup([x - up, *extra]), neg, "range")
    lower = Implication(f"range-low@{loc}", _dedup([low - x, *extra]), neg, "range")
    return upper, lower


def entailment_constraints(template: Template, loc: str, box: Mapping[str, tuple], names: Iterable[str],
                           a, known: Mapping[str, tuple] | None = None) -> list[Implication]:
    """``eta >= 0`` entails ``lo <= y <= hi`` for every ``y`` in ``names``.

    Premises use only ``known`` boxes (already proven invariant); other
    variables get the always-true premise ``v^2 >= 0``.
    """
    known = dict(known or {})
    tvars = template.variables(loc)
    out = []
    for y in names:
        if y not in tvars or y not in box:
            continue
        extra = []
        for v in tvars:
            if v == y:
                continue
            if v in known:
                extra += box_premises(known, [v])
            else:
                extra.append(Poly.var(v) ** 2)
        lo, hi = box[y]
        up, dn = range_constraints(template, loc, y, hi, lo, a, extra)
        out += [replace_label(up, f"entail-up {y}@{loc}", "entailment"),
                replace_label(dn, f"entail-low {y}@{loc}", "entailment")]
    return out


def replace_label(c: Implication, label: str, kind: str) -> Implication:
    return Implication(label, c.premises, c.conclusion, kind)
