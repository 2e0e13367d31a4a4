"""Coarse invariants: one bounded box per location.

Three sources: a ``#coarse:`` pragma, interval iteration for loops with a
known trip count, and data-driven sampling otherwise.  ``verified_vars``
finds the coordinates that are already provably invariant, which lets
later stages skip their entailment checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .cfg import FpCfg, loop_cfg
from .fpformat import FloatFormat
from .fpmodel import _eval_batch, const_error_bound
from .frontend import If, SourceProgram, While, dnf
from .interval import Interval, IntervalError, bisect_box
from .poly import Poly
from .simulate import SimulationOverflow, precondition_box, run_program, sample_precondition
from .templates import atom_premise
from .terms import INT, Var, term_vars, to_ratfunc

DECLARED = "declared"
INTERVAL = "interval-iterated"
DATA = "data-driven"


class CoarseError(Exception):
    pass


@dataclass(frozen=True)
class CoarseInvariant:
    boxes: dict  # loc -> {var: (lo, hi)}
    provenance: str
    verified: frozenset = frozenset()

    def box(self, loc: str) -> dict:
        return self.boxes[loc]

    def with_boxes(self, boxes: dict, verified=None) -> "CoarseInvariant":
        return replace(self, boxes=boxes, verified=self.verified if verified is None else frozenset(verified))


def _finite_box(box: Mapping[str, tuple], names) -> dict:
    out = {}
    for v in names:
        if v not in box or box[v][0] is None or box[v][1] is None:
            raise CoarseError(f"no finite bound for {v!r}")
        out[v] = (Fraction(box[v][0]), Fraction(box[v][1]))
    return out


def written_vars(cfg: FpCfg) -> set[str]:
    out = set()
    for t in cfg.transitions:
        for v, term in t.update:
            if not (isinstance(term, Var) and term.name == v):
                out.add(v)
    return out


# -- guard restriction and images -------------------------------------------------------


def restrict_by_guard(box: Mapping[str, tuple], guard) -> Optional[dict]:
    """Intersect with single-variable affine guard atoms; None when empty."""
    out = dict(box)
    for a in guard:
        h = atom_premise(a)
        if not h.is_polynomial:
            continue
        p = h.as_poly()
        vs = p.variables()
        if len(vs) != 1 or p.degree() != 1:
            continue
        (v,) = vs
        if v not in out:
            continue
        coef = p.coeff(((v, 1),))
        bound = -p.constant_term() / coef
        lo, hi = out[v]
        if coef > 0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
        if lo > hi:
            return None
        out[v] = (lo, hi)
    return out


def image(term, box: Mapping[str, tuple], depth: int = 4) -> tuple[Fraction, Fraction]:
    """Enclosure of the exact value of ``term`` over ``box``.

    Tree-form and expanded-form enclosures are intersected per sub-box.
    """
    names = sorted(term_vars(term))
    rf = to_ratfunc(term).normalized()
    if rf.is_polynomial and rf.as_poly().degree() <= 1:
        # affine: exact endpoints
        p = rf.as_poly()
        lo = hi = p.constant_term()
        for v in names:
            c = p.coeff(((v, 1),))
            a, b = Fraction(box[v][0]), Fraction(box[v][1])
            lo += min(c * a, c * b)
            hi += max(c * a, c * b)
        return lo, hi
    env = bisect_box({v: box[v] for v in names}, depth, names)
    enc = _eval_batch(term, env)
    try:
        alt = _eval_batch(to_ratfunc(term).normalized(), env)
        enc = enc.intersect(alt)
    except IntervalError:
        pass
    tot = enc.total()
    return Fraction(float(tot.lo)), Fraction(float(tot.hi))


def post_box(t, box: Mapping[str, tuple], fmt: FloatFormat, names, depth: int = 4) -> dict:
    """Box containing every rounded successor of ``box`` under ``t``."""
    src = restrict_by_guard(box, t.guard)
    if src is None:
        return {}
    out = {}
    for v in names:
        term = t.term_for(v)
        lo, hi = image(term, src, depth)
        g = const_error_bound(term, src, fmt) if term_vars(term) or not isinstance(term, Var) else 0
        out[v] = (lo - g, hi + g)
    return out


def _hull(a: Mapping[str, tuple], b: Mapping[str, tuple]) -> dict:
    out = dict(a)
    for v, (lo, hi) in b.items():
        if v in out:
            out[v] = (min(out[v][0], lo), max(out[v][1], hi))
        else:
            out[v] = (lo, hi)
    return out


# -- interval iteration ---------------------------------------------------------------------


def iteration_bound(program: SourceProgram) -> Optional[int]:
    """``#iterations`` or the trip count of ``i = c; while (i < N) { ...; i = i + 1; }``."""
    if program.iterations is not None:
        return program.iterations
    if not _has_loop(program.body):
        return 0
    loops = [s for s in program.body if isinstance(s, While)]
    if len(loops) != 1:
        return None
    loop = loops[0]
    pre = precondition_box(program.precondition)
    clauses = dnf(loop.cond)
    if len(clauses) != 1:
        return None
    for a in clauses[0]:
        h = atom_premise(a)
        if not h.is_polynomial:
            continue
        p = h.as_poly()
        vs = p.variables()
        if len(vs) != 1 or p.degree() != 1:
            continue
        (v,) = vs
        if program.kinds.get(v) != INT or v not in pre or pre[v][0] != pre[v][1]:
            continue
        steps = [s for s in loop.body if getattr(s, "name", None) == v]
        if len(steps) != 1:
            continue
        step = to_ratfunc(steps[0].expr).normalized()
        if not step.is_polynomial or step.as_poly() - Poly.var(v) != 1:
            continue
        coef = p.coeff(((v, 1),))
        if coef >= 0:
            continue
        last = -p.constant_term() / coef  # largest value entering the body
        return max(0, int(math.floor(last - pre[v][0])) + 1)
    return None


def _has_loop(stmts) -> bool:
    for s in stmts:
        if isinstance(s, While):
            return True
        if isinstance(s, If) and (_has_loop(s.then) or _has_loop(s.orelse)):
            return True
    return False


def from_interval_iteration(cfg: FpCfg, k: int, fmt: FloatFormat, names=None, depth: int = 4) -> CoarseInvariant:
    """Running hull over ``k`` loop iterations (plus the final exit) of
    interval successor computation."""
    names = list(names if names is not None else cfg.var_names)
    pre = precondition_box(cfg.init)
    start = _finite_box(pre, names)
    boxes: dict[str, dict] = {cfg.initial: dict(start)}
    frontier = {cfg.initial: dict(start)}
    for _ in range(k + 1):
        new_frontier: dict[str, dict] = {}
        for loc, box in frontier.items():
            for t in cfg.outgoing(loc):
                try:
                    img = post_box(t, box, fmt, names, depth)
                except IntervalError as exc:
                    raise CoarseError(f"interval iteration failed: {exc}") from exc
                if not img:
                    continue
                new_frontier[t.target] = _hull(new_frontier.get(t.target, img), img)
        for loc, box in new_frontier.items():
            boxes[loc] = _hull(boxes.get(loc, box), box)
        frontier = new_frontier
        if not frontier:
            break
    everything = dict(start)
    for box in boxes.values():
        everything = _hull(everything, box)
    for loc in cfg.locations:
        boxes.setdefault(loc, dict(everything))  # not reached within k steps
    return CoarseInvariant(boxes, INTERVAL)


# -- data-driven ------------------------------------------------------------------------------


def round_magnitude(v: Fraction) -> Fraction:
    """Smallest number ``>= v`` whose decimal form has one significant
    digit (10 -> 10, 1.25 -> 2, 6.2e-5 -> 7e-5)."""
    v = Fraction(v)
    if v <= 0:
        return Fraction(0)
    k = math.floor(math.log10(v))
    unit = Fraction(10) ** k
    while unit > v:  # guard against log10 rounding
        unit /= 10
    while unit * 10 <= v:
        unit *= 10
    return math.ceil(v / unit) * unit


def pad_box(hull: Mapping[str, tuple], pad: Optional[float] = 1.25) -> dict:
    """Symmetric ``[-M, M]`` with ``M`` = ``pad * max|hull|`` rounded up to
    one significant digit.  ``pad=None`` or ``0`` keeps the exact hull.
    """
    out = {}
    for v, (lo, hi) in hull.items():
        lo, hi = Fraction(lo), Fraction(hi)
        if not pad:
            out[v] = (lo, hi)
            continue
        m = round_magnitude(max(abs(lo), abs(hi)) * Fraction(pad))
        if m == 0:
            m = Fraction(1)
        out[v] = (-m, m)
    return out


def data_driven(program: SourceProgram, cfg: FpCfg, fmt: FloatFormat, n_inputs: int = 100,
                n_iters: int = 10_000, pad: Optional[float] = 1.25, seed: int = 0, names=None) -> CoarseInvariant:
    names = list(names if names is not None else cfg.var_names)
    rng = np.random.default_rng(seed)
    inputs = sample_precondition(program.variables, program.precondition, n_inputs, rng, program.kinds)
    hull = run_program(program, inputs, fmt, n_iters)
    pre = precondition_box(program.precondition)
    written = written_vars(cfg)
    box = {}
    for v in names:
        if v not in written and v in pre and None not in pre[v]:
            box[v] = (Fraction(pre[v][0]), Fraction(pre[v][1]))
        else:
            box.update(pad_box({v: hull[v]}, pad))
    return CoarseInvariant({loc: dict(box) for loc in cfg.locations}, DATA)


def declared(program: SourceProgram, cfg: FpCfg, names=None) -> Optional[CoarseInvariant]:
    if not program.coarse:
        return None
    names = list(names if names is not None else cfg.var_names)
    box = dict(program.coarse_box())
    pre = precondition_box(program.precondition)
    for v in names:
        if v not in box:
            if v in pre and None not in pre[v] and v not in written_vars(cfg):
                box[v] = (Fraction(pre[v][0]), Fraction(pre[v][1]))
            else:
                raise CoarseError(f"#coarse gives no range for {v!r}")
    return CoarseInvariant({loc: dict(box) for loc in cfg.locations}, DECLARED)


def coarse_invariant(program: SourceProgram, cfg: FpCfg, fmt: FloatFormat, names=None, seed: int = 0,
                     n_inputs: int = 100, n_iters: int = 10_000) -> CoarseInvariant:
    """Pragma if present, else interval iteration for bounded loops, else sampling."""
    names = list(names if names is not None else cfg.var_names)
    inv = declared(program, cfg, names)
    if inv is not None:
        return inv
    k = iteration_bound(program)
    if k is not None:
        try:
            return from_interval_iteration(cfg, k, fmt, names)
        except CoarseError:
            pass
    return data_driven(program, cfg, fmt, n_inputs, n_iters, seed=seed, names=names)


# -- verification -------------------------------------------------------------------------------


def verified_vars(cfg: FpCfg, inv: CoarseInvariant, fmt: FloatFormat, names, locations) -> set[str]:
    """Largest set V of variables whose boxes are inductive on their own.

    A variable stays in V when the precondition box fits, and every
    transition maps the boxes (restricted by the guard) into the target
    box using only variables of V.
    """
    names = list(names)
    locations = set(locations)
    pre = precondition_box(cfg.init)
    V = set(names)
    for v in names:
        lo, hi = pre.get(v, (None, None))
        b = inv.boxes[cfg.initial].get(v) if cfg.initial in inv.boxes else None
        if cfg.initial in locations and (lo is None or hi is None or b is None or not (b[0] <= lo and hi <= b[1])):
            V.discard(v)
    changed = True
    while changed:
        changed = False
        for t in cfg.transitions:
            if t.target not in locations or t.source not in locations:
                continue
            src = restrict_by_guard(inv.boxes[t.source], t.guard)
            if src is None:
                continue
            for v in sorted(V):
                term = t.term_for(v)
                deps = term_vars(term)
                ok = deps <= V
                if ok:
                    try:
                        lo, hi = image(term, src)
                        g = const_error_bound(term, src, fmt)
                    except IntervalError:
                        ok = False
                    else:
                        tb = inv.boxes[t.target].get(v)
                        ok = tb is not None and tb[0] <= lo - g and hi + g <= tb[1]
                if not ok:
                    V.discard(v)
                    changed = True
    return V


def enlarge(inv: CoarseInvariant, factor: Fraction, keep=()) -> CoarseInvariant:
    """Scale every unverified coordinate about its midpoint."""
    keep = set(keep)
    boxes = {}
    for loc, box in inv.boxes.items():
        nb = {}
        for v, (lo, hi) in box.items():
            if v in keep:
                nb[v] = (lo, hi)
                continue
            mid = (lo + hi) / 2
            half = max((hi - lo) / 2, Fraction(1, 2))
            nb[v] = (mid - half * factor, mid + half * factor)
        boxes[loc] = nb
    return inv.with_boxes(boxes)
