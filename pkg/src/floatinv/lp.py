"""Linear programs and solver backends.

Three backends share one interface:

* ``highs``: scipy's HiGHS, used for the real systems;
* ``exact``: a dense two-phase simplex over Fractions with Bland's rule,
  for small problems and cross-checks;
* ``command``: any external program reading the text format below on
  stdin and answering ``status <s>`` plus ``var <name> <rational>`` lines.

Text format, one item per line::

    free c_0                  # unbounded variable
    -100 <= c_1 <= 100        # bounded variable
    3*lam_0 + -1/2*c_0 = 0    # equality row
    lam_0 >= 0                # nonnegative variable
    minimize: 1*c_0 + -1*c_1  # optional objective
"""

from __future__ import annotations

import re
import subprocess
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIMEOUT = "timeout"
ERROR = "error"


class LpTimeout(Exception):
    pass


@dataclass
class LpProblem:
    variables: list = field(default_factory=list)
    lower: dict = field(default_factory=dict)  # name -> Fraction or None (free)
    upper: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)  # (dict name -> Fraction, rhs)
    objective: dict = field(default_factory=dict)  # minimized

    def add_var(self, name: str, lower=None, upper=None) -> None:
        if name not in self.lower:
            self.variables.append(name)
        self.lower[name] = lower
        self.upper[name] = upper

    def dump(self) -> str:
        lines = []
        for v in self.variables:
            lo, hi = self.lower[v], self.upper[v]
            if lo is None and hi is None:
                lines.append(f"free {v}")
            elif hi is None:
                lines.append(f"{v} >= {_q(lo)}")
            elif lo is None:
                lines.append(f"{v} <= {_q(hi)}")
            else:
                lines.append(f"{_q(lo)} <= {v} <= {_q(hi)}")
        for r, rhs in self.rows:
            terms = " + ".join(f"{_q(c)}*{v}" for v, c in r.items()) or "0"
            lines.append(f"{terms} = {_q(rhs)}")
        if self.objective:
            lines.append("minimize: " + " + ".join(f"{_q(c)}*{v}" for v, c in self.objective.items()))
        return "\n".join(lines) + "\n"


@dataclass
class LpOutcome:
    status: str
    values: dict = field(default_factory=dict)  # name -> float or Fraction
    objective: Optional[float] = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)


def _q(c) -> str:
    c = Fraction(c)
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


_TERM = re.compile(r"^\s*([-+]?\s*[0-9./eE+-]*?)\s*\*?\s*([A-Za-z_][\w']*)\s*$")


def _parse_terms(text: str) -> dict:
    out: dict = {}
    text = text.strip()
    if text == "0":
        return out
    for part in re.split(r"\s\+\s", text):
        m = _TERM.match(part)
        if not m:
            raise ValueError(f"bad term {part!r}")
        coef = m.group(1).replace(" ", "")
        coef = Fraction(1) if coef in ("", "+") else Fraction(-1) if coef == "-" else Fraction(coef)
        out[m.group(2)] = out.get(m.group(2), 0) + coef
    return out


def parse_lp(text: str) -> LpProblem:
    prob = LpProblem()
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("free "):
            prob.add_var(line[5:].strip())
        elif line.startswith("minimize:"):
            prob.objective = _parse_terms(line[len("minimize:"):])
        elif m := re.fullmatch(r"(\S+)\s*<=\s*([A-Za-z_][\w']*)\s*<=\s*(\S+)", line):
            prob.add_var(m.group(2), Fraction(m.group(1)), Fraction(m.group(3)))
        elif m := re.fullmatch(r"([A-Za-z_][\w']*)\s*>=\s*(\S+)", line):
            prob.add_var(m.group(1), Fraction(m.group(2)), prob.upper.get(m.group(1)))
        elif m := re.fullmatch(r"([A-Za-z_][\w']*)\s*<=\s*(\S+)", line):
            prob.add_var(m.group(1), prob.lower.get(m.group(1)), Fraction(m.group(2)))
        elif "=" in line:
            lhs, rhs = line.rsplit("=", 1)
            rows.append((_parse_terms(lhs), Fraction(rhs.strip())))
        else:
            raise ValueError(f"cannot parse line {raw!r}")
    for r, _ in rows:
        for v in r:
            if v not in prob.lower:
                prob.add_var(v)
    prob.rows = rows
    return prob


def format_outcome(out: LpOutcome) -> str:
    lines = [f"status {out.status}"]
    for k, v in out.values.items():
        q = v if isinstance(v, Fraction) else Fraction(float(v))
        lines.append(f"var {k} {_q(q)}")
    return "\n".join(lines) + "\n"


def parse_outcome(text: str) -> LpOutcome:
    status = ERROR
    values = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "status":
            status = parts[1]
        elif parts[0] == "var":
            values[parts[1]] = Fraction(parts[2])
    return LpOutcome(status, values)


# -- backends ---------------------------------------------------------------------------


def lp_solve(problem: LpProblem, backend: str = "highs", timeout: Optional[float] = None,
             command: Optional[list] = None) -> LpOutcome:
    if backend == "highs":
        return _solve_highs(problem, timeout)
    if backend == "exact":
        return solve_exact(problem)
    if backend == "command":
        return _solve_command(problem, command or [], timeout)
    raise ValueError(f"unknown backend {backend!r}")


def _solve_highs(problem: LpProblem, timeout: Optional[float]) -> LpOutcome:
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix

    index = {v: j for j, v in enumerate(problem.variables)}
    data, ri, ci, b = [], [], [], []
    for i, (r, rhs) in enumerate(problem.rows):
        for v, c in r.items():
            data.append(float(c))
            ri.append(i)
            ci.append(index[v])
        b.append(float(rhs))
    n = len(problem.variables)
    if n == 0:
        ok = all(rhs == 0 for _, rhs in problem.rows)
        return LpOutcome(OPTIMAL if ok else INFEASIBLE, {}, 0.0)
    a_eq = csr_matrix((data, (ri, ci)), shape=(len(problem.rows), n)) if problem.rows else None
    b_eq = np.array(b) if problem.rows else None
    cvec = np.zeros(n)
    for v, c in problem.objective.items():
        cvec[index[v]] = float(c)
    lo = np.array([-np.inf if problem.lower[v] is None else float(problem.lower[v]) for v in problem.variables])
    hi = np.array([np.inf if problem.upper[v] is None else float(problem.upper[v]) for v in problem.variables])
    col = np.ones(n)
    a_raw = a_eq
    if a_eq is not None:
        a_eq, b_eq, col = _equilibrate(a_eq, b_eq)
        cvec = cvec * col
        lo, hi = lo / col, hi / col
    bounds = [(None if np.isinf(l) else l, None if np.isinf(h) else h) for l, h in zip(lo, hi)]
    options = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}
    if timeout is not None:
        if timeout <= 0:
            raise LpTimeout()
        options["time_limit"] = float(timeout)
    res = linprog(cvec, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method="highs", options=options)
    if res.status == 0:
        x = res.x * col
        if a_raw is not None and not _consistent(a_raw, np.array(b), x):
            return LpOutcome(ERROR, message="solution violates the equalities after unscaling")
        values = {v: float(x[j]) for v, j in index.items()}
        return LpOutcome(OPTIMAL, values, float(res.fun), res.message)
    if res.status == 2:
        return LpOutcome(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpOutcome(UNBOUNDED, message=res.message)
    if res.status == 1 and "time" in str(res.message).lower():
        raise LpTimeout(res.message)
    return LpOutcome(ERROR, message=str(res.message))


def _consistent(a, b, x, rtol: float = 1e-7, atol: float = 1e-10) -> bool:
    """Row residuals small relative to the row's largest term (or below
    ``atol``)."""
    a = a.tocsr()
    resid = np.abs(a @ x - b)
    scale = np.maximum(abs(a).multiply(np.abs(x)).max(axis=1).toarray().ravel(), np.abs(b))
    return bool(np.all(resid <= rtol * scale + atol))


def _equilibrate(a, b, rounds: int = 8, mode: str = "geo"):
    """Power-of-two row and column scaling: towards unit geometric mean of
    the entries (``geo``) or unit max-norm (``max``).

    Returns ``(scaled a, scaled b, column factors)``; a solution ``y`` of
    the scaled problem maps back as ``x = y * factors``.
    """
    from scipy.sparse import diags

    a = a.tocsr().astype(float)
    b = b.astype(float).copy()
    col = np.ones(a.shape[1])
    for _ in range(rounds):
        rmax = _row_size(a, mode)
        rs = np.where(rmax > 0, 2.0 ** -np.round(np.log2(np.where(rmax > 0, rmax, 1.0))), 1.0)
        a = diags(rs) @ a
        b = b * rs
        cmax = _row_size(a.T.tocsr(), mode)
        cs = np.where(cmax > 0, 2.0 ** -np.round(np.log2(np.where(cmax > 0, cmax, 1.0))), 1.0)
        a = (a @ diags(cs)).tocsr()
        col *= cs
    return a, b, col


def _row_size(a, mode: str) -> np.ndarray:
    m = abs(a).tocsr()
    if mode == "max":
        return m.max(axis=1).toarray().ravel()
    out = np.zeros(m.shape[0])
    for k in range(m.shape[0]):
        seg = m.data[m.indptr[k]:m.indptr[k + 1]]
        seg = seg[seg > 0]
        out[k] = np.sqrt(seg.min() * seg.max()) if len(seg) else 0.0
    return out


def _solve_command(problem: LpProblem, command: list, timeout: Optional[float]) -> LpOutcome:
    try:
        proc = subprocess.run(command, input=problem.dump(), capture_output=True, text=True,
                              timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise LpTimeout(str(exc)) from exc
    if proc.returncode != 0:
        return LpOutcome(ERROR, message=proc.stderr.strip())
    return parse_outcome(proc.stdout)


# -- exact simplex ------------------------------------------------------------------------


def solve_exact(problem: LpProblem) -> LpOutcome:
    """Two-phase simplex in exact rational arithmetic (Bland's rule).

    Every variable is rewritten as ``lower + y`` (``y >= 0``), ``upper - y``
    or ``y+ - y-`` (free); upper bounds of boxed variables become rows.
    """
    cols: list[tuple[str, int, Fraction]] = []  # (var, sign, offset) per column
    shift: dict[str, Fraction] = {}
    var_cols: dict[str, list[tuple[int, int]]] = {}
    extra_rows: list[tuple[dict, Fraction]] = []

    def new_col(v: str, sign: int) -> int:
        cols.append((v, sign, Fraction(0)))
        var_cols.setdefault(v, []).append((len(cols) - 1, sign))
        return len(cols) - 1

    for v in problem.variables:
        lo, hi = problem.lower[v], problem.upper[v]
        if lo is not None:
            shift[v] = Fraction(lo)
            new_col(v, 1)
            if hi is not None:
                extra_rows.append(({v: Fraction(1)}, Fraction(hi)))
        elif hi is not None:
            shift[v] = Fraction(hi)
            new_col(v, -1)
        else:
            shift[v] = Fraction(0)
            new_col(v, 1)
            new_col(v, -1)

    rows = []
    for r, rhs in problem.rows:
        rows.append((r, Fraction(rhs), False))
    for r, rhs in extra_rows:
        rows.append((r, rhs, True))  # v <= hi: needs a slack column

    slack_cols = []
    for k, (_, _, needs_slack) in enumerate(rows):
        if needs_slack:
            cols.append(("__slack", 1, Fraction(0)))
            slack_cols.append((k, len(cols) - 1))

    n = len(cols)
    m = len(rows)
    A = [[Fraction(0)] * n for _ in range(m)]
    b = [Fraction(0)] * m
    for i, (r, rhs, _) in enumerate(rows):
        val = Fraction(rhs)
        for v, c in r.items():
            c = Fraction(c)
            val -= c * shift[v]
            for j, sign in var_cols[v]:
                A[i][j] += c * sign
        b[i] = val
    for i, j in slack_cols:
        A[i][j] = Fraction(1)
    for i in range(m):
        if b[i] < 0:
            A[i] = [-a for a in A[i]]
            b[i] = -b[i]

    cost = [Fraction(0)] * n
    for v, c in problem.objective.items():
        for j, sign in var_cols[v]:
            cost[j] += Fraction(c) * sign

    # phase 1 with artificials
    total = n + m
    T = [A[i] + [Fraction(1) if k == i else Fraction(0) for k in range(m)] + [b[i]] for i in range(m)]
    basis = [n + i for i in range(m)]
    phase1 = [Fraction(0)] * n + [Fraction(1)] * m
    if m and not _simplex(T, basis, phase1, total):
        return LpOutcome(UNBOUNDED)
    if m and _objective(T, basis, phase1) > 0:
        return LpOutcome(INFEASIBLE)
    # drive artificials out of the basis
    for i in range(m):
        if basis[i] >= n:
            for j in range(n):
                if T[i][j] != 0:
                    _pivot(T, basis, i, j)
                    break
    keep = [i for i in range(m) if basis[i] < n]
    T = [T[i][:n] + [T[i][-1]] for i in keep]
    basis = [basis[i] for i in keep]
    if not _simplex(T, basis, cost, n):
        return LpOutcome(UNBOUNDED)
    x = [Fraction(0)] * n
    for i, j in enumerate(basis):
        x[j] = T[i][-1]
    values = {}
    for v in problem.variables:
        values[v] = shift[v] + sum(x[j] * sign for j, sign in var_cols[v])
    obj = sum(Fraction(c) * values[v] for v, c in problem.objective.items())
    return LpOutcome(OPTIMAL, values, obj)


def _objective(T, basis, cost) -> Fraction:
    return sum(cost[j] * T[i][-1] for i, j in enumerate(basis))


def _pivot(T, basis, r: int, c: int) -> None:
    piv = T[r][c]
    T[r] = [a / piv for a in T[r]]
    for i in range(len(T)):
        if i != r and T[i][c] != 0:
            f = T[i][c]
            T[i] = [a - f * b for a, b in zip(T[i], T[r])]
    basis[r] = c


def _simplex(T, basis, cost, ncols: int) -> bool:
    """Minimize ``cost`` over the current tableau; False when unbounded."""
    while True:
        in_basis = set(basis)
        entering = None
        for j in range(ncols):
            if j in in_basis:
                continue
            reduced = cost[j] - sum(cost[basis[i]] * T[i][j] for i in range(len(T)))
            if reduced < 0:
                entering = j
                break
        if entering is None:
            return True
        best = None
        for i in range(len(T)):
            a = T[i][entering]
            if a > 0:
                ratio = T[i][-1] / a
                if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                    best = (ratio, i)
        if best is None:
            return False
        _pivot(T, basis, best[1], entering)


class Deadline:
    """Cooperative wall-clock budget."""

    def __init__(self, seconds: Optional[float]):
        self.end = None if seconds is None else time.monotonic() + seconds

    def remaining(self) -> Optional[float]:
        if self.end is None:
            return None
        return self.end - time.monotonic()

    def check(self) -> None:
        if self.end is not None and time.monotonic() > self.end:
            raise LpTimeout("deadline exceeded")
