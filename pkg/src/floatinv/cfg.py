"""Floating-point control-flow graphs.

``build_cfg`` gives one location per statement plus a termination location;
``summarize`` composes loop-free segments between cut points.  Every
rounding operation in an update or guard owns a site number; sites of
distinct transitions are disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import count
from typing import Iterable, Mapping, Optional

from .frontend import Assign, Atom, If, SourceProgram, While, dnf
from .terms import (
    INT,
    BinOp,
    Const,
    Term,
    Var,
    denominators,
    make_binop,
    map_sites,
    rounding_ops,
    substitute,
    term_str,
    term_vars,
    to_ratfunc,
)

END = "end"


class CfgError(Exception):
    pass


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: tuple  # Atoms, rel in {'<=', '<'}
    update: tuple  # ((var, Term), ...) for written variables, in program order

    @property
    def update_map(self) -> dict[str, Term]:
        return dict(self.update)

    def term_for(self, var: str) -> Term:
        return self.update_map.get(var, Var(var))

    @property
    def sites(self) -> tuple[int, ...]:
        found: set[int] = set()
        for _, t in self.update:
            found.update(op.site for op in rounding_ops(t))
        for a in self.guard:
            for side in (a.left, a.right):
                found.update(op.site for op in rounding_ops(side))
        return tuple(sorted(found))

    @property
    def update_sites(self) -> tuple[int, ...]:
        found: set[int] = set()
        for _, t in self.update:
            found.update(op.site for op in rounding_ops(t))
        return tuple(sorted(found))

    def denominators(self) -> list[Term]:
        out = []
        for _, t in self.update:
            out.extend(denominators(t))
        return out

    def __str__(self) -> str:
        guard = " && ".join(str(a) for a in self.guard) or "0 <= 0"
        upd = ", ".join(f"{v} := {term_str(t)}" for v, t in self.update)
        errs = ",".join(f"e{s},d{s}" for s in self.sites)
        return f"trans {self.source} -> {self.target} [{guard}] {{{upd}}} errvars={{{errs}}}"


@dataclass(frozen=True)
class FpCfg:
    locations: tuple
    initial: str
    variables: tuple  # ((name, kind), ...)
    init: tuple  # precondition Atoms
    transitions: tuple
    loop_heads: tuple = ()
    program: Optional[SourceProgram] = field(default=None, compare=False)

    @property
    def kinds(self) -> dict[str, str]:
        return dict(self.variables)

    @property
    def var_names(self) -> list[str]:
        return [n for n, _ in self.variables]

    def outgoing(self, loc: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == loc]

    def incoming(self, loc: str) -> list[Transition]:
        return [t for t in self.transitions if t.target == loc]

    def dump(self) -> str:
        lines = [f"loc {l}" + (" (initial)" if l == self.initial else "") for l in self.locations]
        lines += [str(t) for t in self.transitions]
        return "\n".join(lines)


# -- constant atoms -------------------------------------------------------------------


def _atom_const_truth(a: Atom) -> Optional[bool]:
    if term_vars(a.left) or term_vars(a.right):
        return None
    diff = to_ratfunc(a.right) - to_ratfunc(a.left)
    v = diff.normalized().as_poly().constant_term()
    return v >= 0 if a.rel == "<=" else v > 0


def _simplify_clause(clause: Iterable[Atom]) -> Optional[tuple]:
    """Drop constant-true atoms; None when some atom is constant-false."""
    out = []
    for a in clause:
        truth = _atom_const_truth(a)
        if truth is False:
            return None
        if truth is None and a not in out:
            out.append(a)
    return tuple(out)


def _clauses(cond, negated: bool = False) -> list[tuple]:
    out = []
    for clause in dnf(cond, negated):
        simple = _simplify_clause(clause)
        if simple is not None and simple not in out:
            out.append(simple)
    return out


# -- construction ----------------------------------------------------------------------


def build_cfg(program: SourceProgram) -> FpCfg:
    """Per-statement graph: one location per statement plus ``end``."""
    locs: list[str] = []
    trans: list[Transition] = []
    heads: list[str] = []
    counter = count()

    def fresh() -> str:
        name = f"l{next(counter)}"
        locs.append(name)
        return name

    def block(stmts, exit_loc: str) -> str:
        """Wire ``stmts`` to fall through to ``exit_loc``; return entry."""
        if not stmts:
            return exit_loc
        entries = [fresh() for _ in stmts]
        for idx, s in enumerate(stmts):
            here = entries[idx]
            nxt = entries[idx + 1] if idx + 1 < len(stmts) else exit_loc
            if isinstance(s, Assign):
                trans.append(Transition(here, nxt, (), ((s.name, s.expr),)))
            elif isinstance(s, If):
                then_entry = block(s.then, nxt)
                else_entry = block(s.orelse, nxt)
                for clause in _clauses(s.cond):
                    trans.append(Transition(here, then_entry, clause, ()))
                for clause in _clauses(s.cond, negated=True):
                    trans.append(Transition(here, else_entry, clause, ()))
            elif isinstance(s, While):
                heads.append(here)
                body_entry = block(s.body, here)
                for clause in _clauses(s.cond):
                    trans.append(Transition(here, body_entry, clause, ()))
                for clause in _clauses(s.cond, negated=True):
                    trans.append(Transition(here, nxt, clause, ()))
        return entries[0]

    initial = block(program.body, END)
    locs.append(END)
    locs.sort(key=lambda l: (l == END, int(l[1:]) if l != END else 0))
    cfg = FpCfg(
        locations=tuple(locs),
        initial=initial,
        variables=program.declarations,
        init=program.precondition,
        transitions=tuple(trans),
        loop_heads=tuple(heads),
        program=program,
    )
    return renumber_sites(cfg)


def renumber_sites(cfg: FpCfg) -> FpCfg:
    """Give every transition its own block of site numbers.

    Within a transition, a node shared by several outputs (after
    composition) keeps one site, so it still denotes one rounding.
    """
    fresh = count(1)
    out = []
    for t in cfg.transitions:
        mapping: dict = {}

        def assign(node: BinOp):
            key = node.site if node.site is not None else ("new", id(node))
            if key not in mapping:
                mapping[key] = next(fresh)
            return mapping[key]

        upd = tuple((v, map_sites(e, assign)) for v, e in t.update)
        guard = tuple(Atom(map_sites(a.left, assign), a.rel, map_sites(a.right, assign)) for a in t.guard)
        out.append(replace(t, update=upd, guard=guard))
    return replace(cfg, transitions=tuple(out))


def _compose(first: Transition, second: Transition) -> Transition:
    """Run ``first`` then ``second``."""
    env = first.update_map
    guard = list(first.guard)
    for a in second.guard:
        na = Atom(substitute(a.left, env), a.rel, substitute(a.right, env))
        if na not in guard:
            guard.append(na)
    upd = dict(first.update)
    for v, e in second.update:
        upd[v] = substitute(e, env)
    order = [v for v, _ in first.update] + [v for v, _ in second.update if v not in first.update_map]
    return Transition(first.source, second.target, tuple(guard), tuple((v, upd[v]) for v in order))


def summarize(cfg: FpCfg, cutpoints: Iterable[str]) -> FpCfg:
    """Compose every loop-free path between consecutive cut points."""
    cuts = set(cutpoints)
    if cfg.initial not in cuts:
        raise CfgError("cut points must include the initial location")
    if END in cfg.locations and END not in cuts:
        raise CfgError("cut points must include the termination location")
    new: list[Transition] = []

    def extend(path: Transition, visited: tuple):
        loc = path.target
        if loc in cuts:
            simple = _simplify_clause(path.guard)
            if simple is not None:
                new.append(replace(path, guard=simple))
            return
        if loc in visited:
            raise CfgError(f"cycle through {loc} avoids all cut points")
        for t in cfg.outgoing(loc):
            extend(_compose(path, t), visited + (loc,))

    ordered = [l for l in cfg.locations if l in cuts]
    for c in ordered:
        for t in cfg.outgoing(c):
            extend(t, (c,))
    cfg2 = replace(cfg, locations=tuple(ordered), transitions=tuple(new),
                   loop_heads=tuple(h for h in cfg.loop_heads if h in cuts))
    return renumber_sites(cfg2)


def default_cutpoints(cfg: FpCfg) -> list[str]:
    cuts = {cfg.initial, *cfg.loop_heads}
    if END in cfg.locations:
        cuts.add(END)
    return [l for l in cfg.locations if l in cuts]


def prune_unreachable(cfg: FpCfg) -> FpCfg:
    seen = {cfg.initial}
    stack = [cfg.initial]
    while stack:
        l = stack.pop()
        for t in cfg.outgoing(l):
            if t.target not in seen:
                seen.add(t.target)
                stack.append(t.target)
    return replace(
        cfg,
        locations=tuple(l for l in cfg.locations if l in seen),
        transitions=tuple(t for t in cfg.transitions if t.source in seen),
    )


def loop_cfg(program: SourceProgram) -> FpCfg:
    """Build, summarize at the default cut points, and prune."""
    cfg = build_cfg(program)
    return prune_unreachable(summarize(cfg, default_cutpoints(cfg)))


# -- liveness -----------------------------------------------------------------------------


def live_variables(cfg: FpCfg, observed: Iterable[str] = ()) -> dict[str, list[str]]:
    """Variables whose value at a location can influence a guard, a later
    live value, or an ``observed`` variable (live everywhere)."""
    names = cfg.var_names
    live: dict[str, set[str]] = {l: set(observed) for l in cfg.locations}
    changed = True
    while changed:
        changed = False
        for t in cfg.transitions:
            need = set()
            for a in t.guard:
                need |= term_vars(a.left) | term_vars(a.right)
            for v in live[t.target]:
                need |= term_vars(t.term_for(v))
            if not need <= live[t.source]:
                live[t.source] |= need
                changed = True
    return {l: [v for v in names if v in live[l]] for l in cfg.locations}


# -- guard over-approximation --------------------------------------------------------------


def tighten_int_atom(a: Atom) -> Atom:
    """``a < c`` over ints becomes ``a <= c - 1``."""
    if a.rel == "<" and a.left.kind == INT and a.right.kind == INT:
        return Atom(a.left, "<=", make_binop("-", a.right, Const(Fraction(1), INT)))
    return a


def overapprox_guard(guard: Iterable[Atom], bound_provider) -> list:
    """Relax a conjunction for rounding.

    Returns a list of ``(lhs, rhs, slack_left, slack_right)`` tuples standing
    for ``lhs - slack_left <= rhs + slack_right``, where the slacks come
    from ``bound_provider(term)``.  Rounding-free atoms get zero slack;
    int strict atoms are tightened, float strict atoms weakened.
    """
    out = []
    for a in guard:
        a = tighten_int_atom(a)
        sl = bound_provider(a.left) if rounding_ops(a.left) else 0
        sr = bound_provider(a.right) if rounding_ops(a.right) else 0
        out.append((a.left, a.right, sl, sr))
    return out
