"""Template solving, range optimization, and the acceptance gate.

``build_instance`` turns a program, a coarse invariant and a config into
the static certificate system (initiation, consecution, entailment).  The
range constraints depend on the probed ``up``/``low`` and are assembled
per probe.  Every accepted solution goes through ``verify_solution``:
exact certificate residual, multiplier signs and coarse containment.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import coarse as coarse_mod
from .cfg import END, FpCfg, live_variables
from .fpmodel import const_error_bound, symbolic_error_bound, transition_error_bound
from .lp import INFEASIBLE, OPTIMAL, Deadline, LpOutcome, LpProblem, LpTimeout, lp_solve
from .poly import Poly, poly_str
from .positivity import LinearCertSystem, assemble, residual
from .templates import (
    DivisionError,
    Implication,
    SolveConfig,
    Template,
    box_premises,
    consecution_r1,
    consecution_r2,
    entailment_constraints,
    guard_premises,
    initiation,
    make_template,
    range_constraints,
)
from .terms import term_vars

RESIDUAL_TOL = Fraction(1, 10 ** 6)
LAMBDA_TOL = -1e-9


class SolveError(Exception):
    """No invariant under the current configuration."""


class InitialProbeInfeasible(SolveError):
    """The widest probe failed: the coarse invariant is likely wrong."""


# -- problem instance ---------------------------------------------------------------------


@dataclass
class Instance:
    cfg: FpCfg
    config: SolveConfig
    template: Template
    target: str
    report_loc: str
    report_premises: list  # one premise list per exit clause ([[]] when none)
    static: LinearCertSystem
    constraints: list
    gammas: dict  # transition index -> ErrorBound
    coarse: Optional[coarse_mod.CoarseInvariant]
    verified: frozenset
    search: tuple  # (low, high) initial interval for the target
    coef_bounds: dict = field(default_factory=dict)  # unknown -> bound on |c|

    @property
    def term_size(self) -> int:
        return self.static.term_size


def template_locations(cfg: FpCfg, report_at: str = "head") -> list[str]:
    locs = [l for l in cfg.locations if cfg.outgoing(l)]
    if (report_at == "end" or not cfg.loop_heads or not locs) and END in cfg.locations:
        locs.append(END)
    return locs


def report_location(cfg: FpCfg, locs: list[str], report_at: str) -> tuple[str, list]:
    """Location whose template bounds the target, and its exit guards.

    At a loop head the exit guards are conjoined to the range premises;
    this needs every exit of the head to go to ``end`` without updates.
    """
    if report_at == "head" and len(cfg.loop_heads) == 1:
        head = cfg.loop_heads[0]
        exits = [t for t in cfg.outgoing(head) if t.target not in locs or t.target == END]
        if head in locs and all(not t.update for t in exits):
            return head, [t.guard for t in exits] or [()]
    if END in locs:
        return END, [()]
    return locs[-1], [()]


def _guard_slack(box, fmt, symbolic: bool):
    def slack(term):
        if symbolic:
            return symbolic_error_bound(term, fmt)
        return const_error_bound(term, box, fmt)

    return slack


def _box_at(inv: Optional[coarse_mod.CoarseInvariant], loc: str):
    return None if inv is None else inv.boxes[loc]


def build_instance(cfg: FpCfg, config: SolveConfig, target: str,
                   inv: Optional[coarse_mod.CoarseInvariant], verified=frozenset(),
                   search: Optional[tuple] = None, scale: Optional[coarse_mod.CoarseInvariant] = None) -> Instance:
    """Static constraints for one coarse invariant (``None`` for algorithm B).

    ``scale`` (default: ``inv``) only sizes the coefficient bounds.
    """
    fmt = config.fmt
    symbolic = config.algorithm == "B"
    if symbolic:
        inv_used = None
    else:
        if inv is None:
            raise SolveError("algorithm A needs a coarse invariant")
        inv_used = inv
    locs = template_locations(cfg, config.report_at)
    live = live_variables(cfg, [target])
    template = make_template({l: live[l] for l in locs}, config.degree)
    report_loc, exits = report_location(cfg, locs, config.report_at)
    if target not in template.variables(report_loc):
        raise SolveError(f"target {target!r} is not tracked at {report_loc}")

    constraints: list[Implication] = []
    if cfg.initial in locs:
        constraints.append(initiation(template, cfg.init, cfg.initial))
    gammas = {}
    for k, t in enumerate(cfg.transitions):
        if t.target not in locs or t.source not in locs:
            continue
        box = _box_at(inv_used, t.source)
        src_box = coarse_mod.restrict_by_guard(box, t.guard) if box is not None else None
        if box is not None and src_box is None:
            continue  # guard unsatisfiable inside the coarse box
        upd = {v: t.term_for(v) for v in template.variables(t.target)}
        if symbolic:
            gamma = transition_error_bound(upd, None, fmt)
        else:
            gamma = transition_error_bound(upd, src_box, fmt, config.depth)
        gammas[k] = gamma
        gprem = guard_premises(t.guard, _guard_slack(src_box, fmt, symbolic), src_box)
        label = f"cons {t.source}->{t.target} #{k}"
        try:
            if config.relax == "r2":
                c = consecution_r2(template, t, gamma, src_box, gprem, config, label)
            else:
                post = None
                if config.post_box and src_box is not None:
                    post = {}
                    for v, term in upd.items():
                        post[v] = coarse_mod.image(term, src_box)
                c = consecution_r1(template, t, gamma, src_box, gprem, config, post, label)
        except DivisionError as exc:
            raise SolveError(str(exc)) from exc
        constraints.append(c)

    report_premises = []
    for clause in exits:
        box = _box_at(inv_used, report_loc)
        prem = guard_premises(clause, _guard_slack(box, fmt, symbolic), box) if clause else []
        report_premises.append(prem)

    if inv_used is not None:
        for loc in locs:
            box = inv_used.boxes[loc]
            names = [v for v in template.variables(loc) if v not in verified]
            known = {v: box[v] for v in template.variables(loc) if v in verified}
            constraints += entailment_constraints(template, loc, box, names, config.a, known)

    static = assemble(constraints, config.m, config.degree_cap, _squares(template, config), prefix="lam")
    if search is None:
        if inv_used is not None:
            search = inv_used.boxes[report_loc][target]
        elif inv is not None:
            search = inv.boxes[report_loc][target]
        else:
            raise SolveError("no search interval for the target")
    scale = scale or inv
    bounds = coefficient_bounds(template, config.coef_bound, scale.boxes if scale is not None else None)
    return Instance(cfg, config, template, target, report_loc, report_premises, static, constraints,
                    gammas, inv_used, frozenset(verified), tuple(search), bounds)


def coefficient_bounds(template: Template, bound: Fraction, boxes: Optional[dict]) -> dict:
    """``|c_m| <= bound / min(1, max |m|)`` with ``max |m|`` taken over the
    location's box: monomials that stay tiny get room to matter."""
    out = {}
    for loc in template.locations:
        box = (boxes or {}).get(loc) or {}
        for k, mono in enumerate(template.basis(loc)):
            size = Fraction(1)
            for v, e in mono:
                if v not in box:
                    size = Fraction(1)
                    break
                lo, hi = box[v]
                size *= max(abs(Fraction(lo)), abs(Fraction(hi))) ** e
            scale = min(Fraction(1), size) if size > 0 else Fraction(1)
            out[template.unknown(loc, k)] = bound / scale
    return out


def _squares(template: Template, config: SolveConfig) -> list:
    if not config.squares:
        return []
    names = []
    for l in template.locations:
        for v in template.variables(l):
            if v not in names:
                names.append(v)
    return [Poly.var(v) ** 2 for v in names]


def range_premises(inst: Instance, clause_prem: list) -> list:
    """Exit-guard premises plus the coarse box of the report location.

    The coarse box is invariant once the entailment constraints hold, so
    using it here is sound.  Without a box (algorithm B) the other
    variables only get ``v^2 >= 0``.
    """
    names = inst.template.variables(inst.report_loc)
    if inst.coarse is not None:
        return list(clause_prem) + box_premises(inst.coarse.boxes[inst.report_loc], names)
    return list(clause_prem) + [Poly.var(v) ** 2 for v in names if v != inst.target]


def range_system(inst: Instance, up, low) -> LinearCertSystem:
    cons = []
    for prem in inst.report_premises:
        extra = range_premises(inst, prem)
        cons += range_constraints(inst.template, inst.report_loc, inst.target, Fraction(up), Fraction(low),
                                  inst.config.a, extra)
    return assemble(cons, inst.config.m, inst.config.degree_cap, _squares(inst.template, inst.config),
                    prefix="mu")


def to_lp(system: LinearCertSystem, template: Template, coef_bound, fixed: Optional[dict] = None,
          objective: Optional[dict] = None) -> LpProblem:
    """LP over multipliers (>= 0) and template unknowns (boxed).

    ``coef_bound`` is one bound for all unknowns or a dict per unknown.
    ``fixed`` pins template unknowns to values, moving them to the
    right-hand sides.
    """
    prob = LpProblem()
    fixed = fixed or {}
    for v in template.unknowns():
        if v not in fixed:
            b = coef_bound[v] if isinstance(coef_bound, dict) else coef_bound
            prob.add_var(v, -b, b)
    for v in system.nonneg:
        prob.add_var(v, Fraction(0), None)
    for row, rhs in system.rows:
        r = {}
        for v, c in row.items():
            if v in fixed:
                rhs = rhs - c * fixed[v]
            else:
                r[v] = c
        if not r:
            if rhs != 0:
                prob.rows.append(({}, rhs))
            continue
        prob.rows.append((r, rhs))
    if objective:
        prob.objective = dict(objective)
    return prob


# -- probes ---------------------------------------------------------------------------------


@dataclass
class Probe:
    up: Fraction
    low: Fraction
    outcome: LpOutcome
    system: LinearCertSystem


class Prober:
    """Feasibility probes for concrete ``(up, low)`` pairs."""

    def __init__(self, inst: Instance, backend: str = "highs", deadline: Optional[Deadline] = None):
        self.inst = inst
        self.backend = backend
        self.deadline = deadline or Deadline(None)
        self.count = 0
        self.last_ok: Optional[Probe] = None

    def __call__(self, up, low) -> Probe:
        self.deadline.check()
        system = self.inst.static.extend(range_system(self.inst, up, low))
        prob = to_lp(system, self.inst.template, self.inst.coef_bounds or self.inst.config.coef_bound)
        self.count += 1
        out = lp_solve(prob, self.backend, self.deadline.remaining())
        p = Probe(Fraction(up), Fraction(low), out, system)
        if out.ok:
            self.last_ok = p
        return p


# -- solutions and verification -----------------------------------------------------------------


@dataclass
class InvariantSolution:
    etas: dict  # loc -> Poly (exact rational coefficients)
    up: Fraction
    low: Fraction
    residual: Fraction
    min_lambda: float
    term_size: int
    values: dict
    report_loc: str
    target: str
    config: SolveConfig
    contained: bool = True
    elapsed: float = 0.0
    probes: int = 0
    system: Optional[LinearCertSystem] = field(default=None, repr=False)
    coarse: Optional[coarse_mod.CoarseInvariant] = field(default=None, repr=False)

    @property
    def width(self) -> Fraction:
        return self.up - self.low

    @property
    def accepted(self) -> bool:
        return self.residual <= RESIDUAL_TOL and self.min_lambda >= LAMBDA_TOL and self.contained

    def invariant_text(self) -> dict:
        return {loc: poly_str(p) for loc, p in self.etas.items()}


@dataclass(frozen=True)
class Verdict:
    residual: Fraction
    min_lambda: float
    contained: bool

    @property
    def accepted(self) -> bool:
        return self.residual <= RESIDUAL_TOL and self.min_lambda >= LAMBDA_TOL and self.contained


def _exact(values: dict) -> dict:
    return {k: v if isinstance(v, Fraction) else Fraction(float(v)) for k, v in values.items()}


def verify_solution(system: LinearCertSystem, values: dict, target_box: Optional[tuple] = None,
                    up=None, low=None) -> Verdict:
    """Exact re-expansion of every certificate at the given assignment."""
    vals = _exact(values)
    res = Fraction(0)
    for cert in system.certificates:
        res = max(res, residual(cert, vals))
    lams = [float(vals.get(v, 0)) for v in system.nonneg]
    min_lam = min(lams) if lams else 0.0
    contained = True
    if target_box is not None and up is not None:
        contained = target_box[0] <= low and up <= target_box[1]
    return Verdict(res, min_lam, contained)


def _round_coeffs(values: dict, names, digits: Optional[int] = 12) -> dict:
    """Template coefficients as short decimals: ``digits`` significant
    digits, or the shortest round-tripping repr when ``digits`` is None."""
    out = {}
    for v in names:
        x = float(values.get(v, 0.0))
        if x == 0 or abs(x) < 1e-14:
            out[v] = Fraction(0)
        elif digits is None:
            out[v] = Fraction(repr(x))
        else:
            out[v] = Fraction(f"{x:.{digits - 1}e}")
    return out


def polish(system: LinearCertSystem, values: dict, names, tiny: float = 1e-12,
           fixed: Optional[dict] = None) -> Optional[dict]:
    """Exact repair of an approximate solution.

    Multipliers below ``tiny`` are set to zero; the equalities are then
    solved exactly by Gauss-Jordan elimination over the remaining
    columns, pivoting on the largest multipliers first.  Non-pivot
    columns keep their (rounded) approximate values; ``fixed`` variables
    move to the right-hand sides.  Returns ``None`` when the restricted
    system is inconsistent.
    """
    fixed = fixed or {}
    approx = {v: Fraction(f"{float(values.get(v, 0.0)):.11e}") for v in list(names) + list(system.nonneg)}
    support = {v for v in system.nonneg if float(values.get(v, 0.0)) > tiny}
    order = sorted(support, key=lambda v: -float(values[v])) + list(names)
    rank = {v: k for k, v in enumerate(order)}
    pivots: dict = {}  # var -> (row dict without the pivot, rhs): var = rhs - sum row
    for row, rhs in system.rows:
        r = {v: Fraction(c) for v, c in row.items() if v in rank and c != 0}
        rhs = Fraction(rhs) - sum((Fraction(c) * fixed[v] for v, c in row.items() if v in fixed), Fraction(0))
        for v in [v for v in r if v in pivots]:
            c = r.pop(v)
            prow, prhs = pivots[v]
            rhs -= c * prhs
            for w, d in prow.items():
                x = r.get(w, 0) - c * d
                if x:
                    r[w] = x
                else:
                    r.pop(w, None)
        if not r:
            if rhs != 0:
                return None
            continue
        p = min(r, key=rank.__getitem__)
        cp = r.pop(p)
        prow = {w: d / cp for w, d in r.items()}
        prhs = rhs / cp
        for v, (orow, orhs) in list(pivots.items()):
            c = orow.pop(p, None)
            if c is None:
                continue
            orhs -= c * prhs
            for w, d in prow.items():
                x = orow.get(w, 0) - c * d
                if x:
                    orow[w] = x
                else:
                    orow.pop(w, None)
            pivots[v] = (orow, orhs)
        pivots[p] = (prow, prhs)
    out = {v: Fraction(0) for v in system.nonneg}
    out.update(fixed)
    for v in order:
        if v not in pivots:
            out[v] = approx[v]
    for v, (prow, prhs) in pivots.items():
        out[v] = prhs - sum((d * out[w] for w, d in prow.items()), Fraction(0))
    return out


EXACT_LIMIT = 60_000  # rows * columns beyond which exact re-solving is skipped


def exact_resolve(system: LinearCertSystem, names, values: Optional[dict] = None,
                  tiny: float = 1e-12, fixed: Optional[dict] = None) -> Optional[dict]:
    """Solve the certificate system in exact arithmetic.

    With ``values``, only multipliers above ``tiny`` there are kept (the
    float solver's support); template unknowns are left free.  Returns
    ``None`` when infeasible or too large.
    """
    fixed = fixed or {}
    keep = [v for v in system.nonneg if values is None or float(values.get(v, 0.0)) > tiny]
    kept = set(keep) | set(names)
    if len(system.rows) * (len(keep) + 2 * len(names)) > EXACT_LIMIT:
        return None
    prob = LpProblem()
    for v in names:
        prob.add_var(v)
    for v in keep:
        prob.add_var(v, Fraction(0), None)
    for row, rhs in system.rows:
        r = {v: c for v, c in row.items() if v in kept}
        rhs = rhs - sum((c * fixed[v] for v, c in row.items() if v in fixed), Fraction(0))
        if r or rhs != 0:
            prob.rows.append((r, rhs))
    out = lp_solve(prob, "exact")
    if not out.ok:
        return None
    vals = {v: Fraction(0) for v in system.nonneg}
    vals.update(out.values)
    vals.update(fixed)
    return vals


def finalize(inst: Instance, probe: Probe, backend: str = "highs", deadline: Optional[Deadline] = None,
             started: float = 0.0, probes: int = 0) -> InvariantSolution:
    """Round the template coefficients, re-solve the multipliers with the
    coefficients fixed, and verify exactly.  Falls back to the repr-rounded
    and raw solutions, then to exact polishing and exact re-solving."""
    deadline = deadline or Deadline(None)
    names = inst.template.unknowns()
    box = inst.coarse.boxes[inst.report_loc][inst.target] if inst.coarse is not None else None
    bounds = inst.coef_bounds or inst.config.coef_bound

    def candidates():
        seen = []
        for digits in (12, None):
            fixed = _round_coeffs(probe.outcome.values, names, digits)
            out = lp_solve(to_lp(probe.system, inst.template, bounds, fixed), backend, deadline.remaining())
            if out.ok:
                values = dict(out.values)
                values.update(fixed)
                seen.append(values)
                yield values
        seen.append(dict(probe.outcome.values))
        yield seen[-1]
        for values in seen:
            polished = polish(probe.system, values, names)
            if polished is not None:
                yield polished
        for values in (probe.outcome.values, None):
            exact = exact_resolve(probe.system, names, values)
            if exact is not None:
                yield exact

    best = None
    for values in candidates():
        vals = _exact(values)
        verdict = verify_solution(probe.system, vals, box, probe.up, probe.low)
        if verdict.accepted:
            best = (vals, verdict)
            break
        if best is None or (verdict.min_lambda >= LAMBDA_TOL, -verdict.residual) > \
                (best[1].min_lambda >= LAMBDA_TOL, -best[1].residual):
            best = (vals, verdict)
    if best is None:
        raise SolveError("no candidate solution")
    vals, verdict = best
    etas = {l: inst.template.instantiate(l, vals) for l in inst.template.locations}
    return InvariantSolution(
        etas=etas, up=probe.up, low=probe.low, residual=verdict.residual, min_lambda=verdict.min_lambda,
        term_size=probe.system.term_size, values=vals, report_loc=inst.report_loc, target=inst.target,
        config=inst.config, contained=verdict.contained, elapsed=time.perf_counter() - started,
        probes=probes, system=probe.system, coarse=inst.coarse,
    )


def template_values(template: Template, etas: dict) -> dict:
    """Coefficient assignment reproducing the given polynomials; raises
    ``ValueError`` when a polynomial uses monomials outside the template."""
    out = {}
    for loc in template.locations:
        p = etas[loc]
        basis = template.basis(loc)
        extra = {m for m, _ in p} - set(basis)
        if extra:
            raise ValueError(f"invariant at {loc} has monomials outside the template")
        for k, m in enumerate(basis):
            out[template.unknown(loc, k)] = Fraction(p.coeff(m))
    return out


def recertify(inst: Instance, etas: dict, up, low, backend: str = "highs") -> Verdict:
    """Re-derive multipliers for fixed invariants and verify exactly."""
    fixed = template_values(inst.template, etas)
    system = inst.static.extend(range_system(inst, up, low))
    box = inst.coarse.boxes[inst.report_loc][inst.target] if inst.coarse is not None else None
    best = None
    out = lp_solve(to_lp(system, inst.template, inst.coef_bounds or inst.config.coef_bound, fixed), backend)
    candidates = []
    if out.ok:
        vals = dict(out.values)
        vals.update(fixed)
        candidates.append(vals)
    for vals in candidates:
        v = verify_solution(system, vals, box, Fraction(up), Fraction(low))
        if v.accepted:
            return v
        best = v
        polished = polish(system, vals, [], fixed=fixed)
        if polished is not None:
            v = verify_solution(system, polished, box, Fraction(up), Fraction(low))
            if v.accepted:
                return v
    for values in ((out.values if out.ok else None), None):
        exact = exact_resolve(system, [], values, fixed=fixed)
        if exact is not None:
            v = verify_solution(system, exact, box, Fraction(up), Fraction(low))
            if v.accepted:
                return v
            best = v
    if best is None:
        return Verdict(Fraction(10 ** 9), float("-inf"), False)
    return best


# -- strategies ---------------------------------------------------------------------------------


def _tolerance(lo: Fraction, hi: Fraction, tol: Optional[Fraction]) -> Fraction:
    if tol is not None:
        return Fraction(tol)
    return max((hi - lo) / 256, Fraction(1, 10 ** 9))


def _snap(x: Fraction) -> Fraction:
    """Probe points with short decimal expansions (keeps the LP data tidy)."""
    return Fraction(x).limit_denominator(10 ** 9)


def strategy_s2(prober: Prober, interval: tuple, tol: Optional[Fraction] = None) -> Probe:
    """Bisection on ``up`` (with ``low`` at the interval start), then on
    ``low`` (with the best ``up``)."""
    lo, hi = Fraction(interval[0]), Fraction(interval[1])
    first = prober(hi, lo)
    if not first.outcome.ok:
        raise InitialProbeInfeasible(f"no invariant with {prober.inst.target} in [{float(lo)}, {float(hi)}]")
    tol = _tolerance(lo, hi, tol)
    best = first
    a, b = lo, hi  # up: infeasible side a, feasible side b
    while b - a > tol:
        mid = _snap((a + b) / 2)
        p = prober(mid, lo)
        if p.outcome.ok:
            b, best = mid, p
        else:
            a = mid
    up = b
    a, b = up, lo  # low: infeasible side a, feasible side b
    while a - b > tol:
        mid = _snap((a + b) / 2)
        p = prober(up, mid)
        if p.outcome.ok:
            b, best = mid, p
        else:
            a = mid
    return best


def strategy_s1(prober: Prober, start: Probe, tol: Optional[Fraction] = None, max_rounds: int = 8) -> Probe:
    """Successive refinement seeded by a feasible pair.

    Alternates coordinate moves on ``up`` and ``low`` with a shrinking step
    and a joint move that narrows both ends; stops when a round improves
    the width by less than the tolerance.
    """
    best = start
    width0 = start.up - start.low
    tol = Fraction(tol) if tol is not None else max(width0 / 4096, Fraction(1, 10 ** 9))
    step = max(width0 / 64, tol)
    for _ in range(max_rounds):
        before = best.up - best.low
        moved = True
        while moved and step >= tol:
            moved = False
            for up, low in ((best.up - step, best.low), (best.up, best.low + step),
                            (best.up - step / 2, best.low + step / 2)):
                if up <= low:
                    continue
                p = prober(_snap(up), _snap(low))
                if p.outcome.ok:
                    best, moved = p, True
                    break
            if not moved:
                step /= 2
                moved = step >= tol
        if before - (best.up - best.low) < tol:
            break
        step = max((best.up - best.low) / 64, tol)
    return best


# -- dynamic cross-check -------------------------------------------------------------------------


def sample_inductiveness(sol: InvariantSolution, cfg: FpCfg, fmt, n: int = 100_000, seed: int = 0,
                         lanes: int = 1000, max_steps: int = 200, tol: float = 1e-9) -> dict:
    """Simulate transitions with sampled rounding errors.

    Counts visited states where a location's template is below ``-tol``,
    and report-location states (with an exit guard satisfied) whose target
    value lies outside ``[low, up]``.
    """
    from .simulate import TransitionSampler, sample_precondition

    if n <= 0:
        return {"transitions": 0, "violations": 0, "range_violations": 0}
    rng = np.random.default_rng(seed)
    sampler = TransitionSampler(cfg, fmt, rng)
    names = cfg.var_names
    etas = {l: p.map_coeffs(float) for l, p in sol.etas.items()}
    low, up = float(sol.low), float(sol.up)
    exits = [t for t in cfg.outgoing(sol.report_loc) if t.target not in sol.etas or t.target == END]
    fired = viol = rviol = 0

    def check(loc, env, mask):
        nonlocal viol, rviol
        if loc in etas and np.any(mask):
            vals = np.asarray(etas[loc].evaluate({v: env[v][mask] for v in names}), dtype=float)
            viol += int(np.sum(vals < -tol))
        if loc == sol.report_loc and np.any(mask):
            at_exit = np.zeros(len(mask), dtype=bool)
            if not exits or loc == END:
                at_exit[:] = True
            else:
                for t in exits:
                    at_exit |= sampler.guard_holds(t, env, sampler.errors(t.sites, len(mask)))
            sel = mask & at_exit
            x = env[sol.target][sel]
            rviol += int(np.sum((x > up + tol) | (x < low - tol)))

    while fired < n:
        k = min(lanes, n - fired)
        env = sample_precondition(names, cfg.init, k, rng, cfg.kinds)
        env = {v: np.asarray(a, dtype=float) for v, a in env.items()}
        groups = [(cfg.initial, np.ones(k, dtype=bool), env)]
        check(cfg.initial, env, groups[0][1])
        for _ in range(max_steps):
            new_groups = []
            for loc, mask, genv in groups:
                for t, ok, nenv in sampler.step(loc, genv):
                    sel = mask & ok
                    if not np.any(sel):
                        continue
                    fired += int(np.sum(sel))
                    check(t.target, nenv, sel)
                    new_groups.append((t.target, sel, nenv))
            groups = _merge(new_groups, names)
            if not groups or fired >= n:
                break
        if not groups and fired == 0:
            break
    return {"transitions": fired, "violations": viol, "range_violations": rviol}


def _merge(groups, names):
    """Combine lane groups at the same location into one env per location."""
    out = {}
    for loc, mask, env in groups:
        if loc not in out:
            out[loc] = (mask.copy(), {v: np.array(env[v], dtype=float) for v in names})
        else:
            m, e = out[loc]
            for v in names:
                e[v] = np.where(mask, env[v], e[v])
            out[loc] = (m | mask, e)
    return [(loc, m, e) for loc, (m, e) in out.items()]


# -- entailment retry and tightening ---------------------------------------------------------


def check_entailment_and_retry(solve_once: Callable, inv: coarse_mod.CoarseInvariant, verify_vars: Callable,
                               factor: Fraction = Fraction(2), retries: int = 3, target: Optional[str] = None):
    """Run ``solve_once(inv, verified)``; when the coarse box is refuted
    (infeasible initial probe), enlarge its unverified coordinates and
    retry.

    The ``target`` coordinate is enlarged even when verified: a tight
    verified box can make the first probe fail (the range constraints
    must exclude its reachable edge), and any superset stays invariant.

    The entailment constraints are part of every system, so a returned
    solution always entails its coarse invariant.
    """
    last: Optional[Exception] = None
    for attempt in range(retries + 1):
        verified = verify_vars(inv)
        try:
            return solve_once(inv, verified), inv, attempt
        except InitialProbeInfeasible as exc:
            last = exc
            inv = coarse_mod.enlarge(inv, factor, keep=set(verified) - {target})
    raise SolveError(f"coarse invariant refuted after {retries} enlargements: {last}")


def tighten_target(inv: coarse_mod.CoarseInvariant, loc: str, target: str, low, up) -> coarse_mod.CoarseInvariant:
    boxes = {l: dict(b) for l, b in inv.boxes.items()}
    boxes[loc][target] = (Fraction(low), Fraction(up))
    return inv.with_boxes(boxes)
