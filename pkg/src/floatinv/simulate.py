"""Vectorized execution of programs and fp-CFGs.

``run_program`` executes the source program lane-parallel in the target
float format (used to guess coarse invariants).  ``TransitionSampler``
steps the summarized fp-CFG under the rounding model with sampled error
values (used to cross-check solved invariants).
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .cfg import FpCfg
from .fpformat import FloatFormat
from .frontend import Assign, Atom, If, SourceProgram, While, dnf
from .templates import atom_premise
from .terms import FLOAT, INT, BinOp, Const, Neg, Term, Var, eval_term, rounding_ops, term_vars


class SimulationOverflow(ArithmeticError):
    pass


def precondition_box(atoms) -> dict[str, tuple]:
    """Bounds implied by single-variable affine atoms (others ignored)."""
    box: dict[str, list] = {}
    for a in atoms:
        h = atom_premise(a)
        if not h.is_polynomial:
            continue
        p = h.as_poly()
        vs = p.variables()
        if len(vs) != 1 or p.degree() != 1:
            continue
        (v,) = vs
        coef = p.coeff(((v, 1),))
        const = p.constant_term()
        bound = -const / coef  # coef*v + const >= 0
        lo, hi = box.setdefault(v, [None, None])
        if coef > 0:
            box[v][0] = bound if lo is None else max(lo, bound)
        else:
            box[v][1] = bound if hi is None else min(hi, bound)
    return {v: (lo, hi) for v, (lo, hi) in box.items()}


def sample_precondition(program_vars, atoms, n: int, rng: np.random.Generator,
                        kinds: Mapping[str, str] | None = None, max_rounds: int = 50) -> dict:
    """Uniform samples from the precondition box, rejecting other atoms."""
    box = precondition_box(atoms)
    kinds = kinds or {}
    missing = [v for v in program_vars if v not in box or None in box[v]]
    out = {v: np.empty(0) for v in program_vars}
    for _ in range(max_rounds):
        batch = {}
        for v in program_vars:
            if v in missing:
                batch[v] = np.zeros(n)
                continue
            lo, hi = float(box[v][0]), float(box[v][1])
            if kinds.get(v) == INT:
                batch[v] = rng.integers(int(np.ceil(lo)), int(np.floor(hi)) + 1, n).astype(float)
            else:
                batch[v] = rng.uniform(lo, hi, n)
        ok = np.ones(n, dtype=bool)
        for a in atoms:
            ok &= _atom_holds(a, batch)
        for v in program_vars:
            out[v] = np.concatenate([out[v], batch[v][ok]])
        if len(out[program_vars[0]]) >= n if program_vars else True:
            break
    return {v: out[v][:n] for v in program_vars}


def _atom_holds(a: Atom, env) -> np.ndarray:
    lhs = eval_term(a.left, env)
    rhs = eval_term(a.right, env)
    res = lhs <= rhs if a.rel == "<=" else lhs < rhs
    return np.broadcast_to(res, next(iter(env.values())).shape) if np.ndim(res) == 0 else res


# -- concrete execution -----------------------------------------------------------------------


class _Machine:
    def __init__(self, program: SourceProgram, fmt: FloatFormat, n_iters: int):
        self.kinds = program.kinds
        self.dtype = fmt.dtype
        self.n_iters = n_iters
        self.hull: dict[str, list] = {}

    def const(self, q: Fraction):
        return self.dtype(float(q))

    def eval(self, t: Term, env):
        def on_op(node: BinOp, v):
            # numpy promotes mixed int/float32 to float64; C converts to float
            return np.asarray(v).astype(self.dtype) if node.kind == FLOAT else v

        with np.errstate(all="ignore"):
            return eval_term(t, env, on_op, self.const)

    def assign(self, s: Assign, env, mask):
        val = self.eval(s.expr, env)
        kind = self.kinds[s.name]
        val = np.asarray(val, dtype=np.int64 if kind == INT else self.dtype)
        val = np.broadcast_to(val, mask.shape)
        if kind != INT and not np.all(np.isfinite(val[mask])):
            raise SimulationOverflow(f"non-finite value assigned to {s.name}")
        env[s.name] = np.where(mask, val, env[s.name])

    def cond(self, c, env) -> np.ndarray:
        clauses = dnf(c)
        shape = next(iter(env.values())).shape
        out = np.zeros(shape, dtype=bool)
        with np.errstate(all="ignore"):
            for clause in clauses:
                ok = np.ones(shape, dtype=bool)
                for a in clause:
                    ok &= _atom_holds(a, env)
                out |= ok
        return out

    def record(self, env, mask):
        for v, arr in env.items():
            if not np.any(mask):
                return
            vals = arr[mask]
            lo, hi = float(np.min(vals)), float(np.max(vals))
            cur = self.hull.setdefault(v, [lo, hi])
            cur[0] = min(cur[0], lo)
            cur[1] = max(cur[1], hi)

    def run(self, stmts, env, mask):
        for s in stmts:
            if not np.any(mask):
                return
            if isinstance(s, Assign):
                self.assign(s, env, mask)
            elif isinstance(s, If):
                c = self.cond(s.cond, env)
                self.run(s.then, env, mask & c)
                self.run(s.orelse, env, mask & ~c)
            else:
                active = mask.copy()
                for _ in range(self.n_iters + 1):
                    self.record(env, active)
                    active &= self.cond(s.cond, env)
                    if not np.any(active):
                        break
                    self.run(s.body, env, active)


def run_program(program: SourceProgram, inputs: Mapping[str, np.ndarray], fmt: FloatFormat,
                n_iters: int = 10_000) -> dict[str, tuple[float, float]]:
    """Execute all lanes; return the hull of every variable over loop-head
    visits (and the initial state).  Loops are cut after ``n_iters``."""
    machine = _Machine(program, fmt, n_iters)
    n = len(next(iter(inputs.values())))
    env = {}
    for v, k in program.declarations:
        arr = np.asarray(inputs.get(v, np.zeros(n)))
        env[v] = arr.astype(np.int64) if k == INT else arr.astype(fmt.dtype)
    mask = np.ones(n, dtype=bool)
    machine.record(env, mask)
    machine.run(program.body, env, mask)
    return {v: (lo, hi) for v, (lo, hi) in machine.hull.items()}


# -- sampled transitions under the rounding model -------------------------------------------


class TransitionSampler:
    """Step the fp-CFG with error values drawn uniformly per rounding site."""

    def __init__(self, cfg: FpCfg, fmt: FloatFormat, rng: np.random.Generator):
        self.cfg = cfg
        self.fmt = fmt
        self.rng = rng
        self.eps = float(fmt.eps)
        self.delta = float(fmt.delta)

    def errors(self, sites, n: int) -> dict:
        return {s: (self.rng.uniform(-self.eps, self.eps, n), self.rng.uniform(-self.delta, self.delta, n))
                for s in sites}

    def guard_holds(self, t, env, errs) -> np.ndarray:
        from .fpmodel import eval_with_errors

        n = len(next(iter(env.values())))
        ok = np.ones(n, dtype=bool)
        for a in t.guard:
            lhs = np.broadcast_to(eval_with_errors(a.left, env, errs), (n,))
            rhs = np.broadcast_to(eval_with_errors(a.right, env, errs), (n,))
            ok &= (lhs <= rhs) if a.rel == "<=" else (lhs < rhs)
        return ok

    def step(self, loc: str, env: dict) -> list[tuple]:
        """Fire the first enabled transition per lane.

        Returns ``[(transition, lane_mask, new_env)]``; lanes with no
        enabled transition are absent.
        """
        from .fpmodel import eval_with_errors

        n = len(next(iter(env.values())))
        taken = np.zeros(n, dtype=bool)
        out = []
        for t in self.cfg.outgoing(loc):
            errs = self.errors(t.sites, n)
            ok = self.guard_holds(t, env, errs) & ~taken
            if not np.any(ok):
                continue
            taken |= ok
            new = dict(env)
            for v, term in t.update:
                val = eval_with_errors(term, env, errs)
                new[v] = np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
            out.append((t, ok, new))
        return out
