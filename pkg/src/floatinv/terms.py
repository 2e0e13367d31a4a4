"""Expression terms shared by the frontend, the CFG and the error model.

A term is an immutable tree.  Arithmetic nodes carry a kind (``int`` or
``float``), a ``rounds`` flag (float operations are rounded, integer
``+ - *`` are exact) and, once the CFG assigns them, a ``site`` number that
owns one pair of error variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterator, Mapping, Optional

from .poly import Poly, RatFunc

INT = "int"
FLOAT = "float"


@dataclass(frozen=True)
class Var:
    name: str
    kind: str = FLOAT


@dataclass(frozen=True)
class Const:
    value: Fraction
    kind: str = FLOAT


@dataclass(frozen=True)
class Neg:
    arg: "Term"

    @property
    def kind(self) -> str:
        return self.arg.kind


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Term"
    right: "Term"
    kind: str = FLOAT
    rounds: bool = True
    site: Optional[int] = field(default=None, compare=False)


Term = Var | Const | Neg | BinOp

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def make_binop(op: str, left: Term, right: Term) -> BinOp:
    kind = INT if (left.kind == INT and right.kind == INT and op != "/") else FLOAT
    return BinOp(op, left, right, kind, kind == FLOAT)


def term_vars(t: Term) -> set[str]:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Const):
        return set()
    if isinstance(t, Neg):
        return term_vars(t.arg)
    return term_vars(t.left) | term_vars(t.right)


def iter_ops(t: Term) -> Iterator[BinOp]:
    """Post-order walk over arithmetic nodes."""
    if isinstance(t, BinOp):
        yield from iter_ops(t.left)
        yield from iter_ops(t.right)
        yield t
    elif isinstance(t, Neg):
        yield from iter_ops(t.arg)


def rounding_ops(t: Term) -> list[BinOp]:
    return [op for op in iter_ops(t) if op.rounds]


def has_division(t: Term) -> bool:
    return any(op.op == "/" for op in iter_ops(t))


def substitute(t: Term, mapping: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return mapping.get(t.name, t)
    if isinstance(t, Const):
        return t
    if isinstance(t, Neg):
        return Neg(substitute(t.arg, mapping))
    return replace(t, left=substitute(t.left, mapping), right=substitute(t.right, mapping))


def map_sites(t: Term, fn: Callable[[BinOp], Optional[int]]) -> Term:
    """Rebuild ``t`` assigning ``fn(node)`` as the site of every rounding node.

    ``fn`` receives the original node, so shared subtrees map consistently.
    """
    if isinstance(t, (Var, Const)):
        return t
    if isinstance(t, Neg):
        return Neg(map_sites(t.arg, fn))
    left = map_sites(t.left, fn)
    right = map_sites(t.right, fn)
    node = replace(t, left=left, right=right)
    if node.rounds:
        node = replace(node, site=fn(t))
    return node


def set_float_vars(t: Term, names: set[str]) -> Term:
    """Re-kind the given variables as float and recompute node kinds."""
    if isinstance(t, Var):
        return Var(t.name, FLOAT) if t.name in names else t
    if isinstance(t, Const):
        return t
    if isinstance(t, Neg):
        return Neg(set_float_vars(t.arg, names))
    return make_binop(t.op, set_float_vars(t.left, names), set_float_vars(t.right, names))


def to_ratfunc(t: Term) -> RatFunc:
    """Exact real-valued meaning of ``t`` (all error variables at zero)."""
    if isinstance(t, Var):
        return RatFunc(Poly.var(t.name))
    if isinstance(t, Const):
        return RatFunc(Poly.const(t.value))
    if isinstance(t, Neg):
        return -to_ratfunc(t.arg)
    a, b = to_ratfunc(t.left), to_ratfunc(t.right)
    if t.op == "+":
        out = a + b
    elif t.op == "-":
        out = a - b
    elif t.op == "*":
        out = a * b
    else:
        out = a / b
    return out.normalized()


def to_poly(t: Term) -> Poly:
    rf = to_ratfunc(t)
    if not rf.is_polynomial:
        raise ValueError("expression has a non-constant denominator")
    return rf.as_poly()


def denominators(t: Term) -> list[Term]:
    """Right operands of every division in ``t``."""
    return [op.right for op in iter_ops(t) if op.op == "/"]


def const_str(q: Fraction) -> str:
    """Exact decimal text when the expansion terminates, else ``(n/d)``."""
    if q.denominator == 1:
        return str(q.numerator)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"({q.numerator}/{q.denominator})"
    digits = max(twos, fives)
    scaled = abs(q.numerator) * 10 ** digits // q.denominator
    text = str(scaled).rjust(digits + 1, "0")
    text = f"{text[:-digits]}.{text[-digits:]}".rstrip("0")
    return ("-" if q < 0 else "") + text


def term_str(t: Term, parent: int = 0, right: bool = False) -> str:
    """Fully readable infix text; re-parses to the same tree."""
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        text = const_str(t.value)
        if t.kind == FLOAT and t.value.denominator == 1:
            text += ".0"
        if t.value < 0:
            return f"({text})"
        return text
    if isinstance(t, Neg):
        return f"(-{term_str(t.arg, 3)})"
    prec = _PREC[t.op]
    text = f"{term_str(t.left, prec)} {t.op} {term_str(t.right, prec, True)}"
    if prec < parent or (right and prec == parent):
        return f"({text})"
    return text


def eval_term(t: Term, env: Mapping[str, object], on_op=None, const=float):
    """Evaluate ``t`` over numbers or numpy arrays.

    ``on_op(node, value)`` may post-process every arithmetic result (used to
    inject rounding or sampled error terms).
    """
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, Const):
        return const(t.value)
    if isinstance(t, Neg):
        return -eval_term(t.arg, env, on_op, const)
    a = eval_term(t.left, env, on_op, const)
    b = eval_term(t.right, env, on_op, const)
    if t.op == "+":
        v = a + b
    elif t.op == "-":
        v = a - b
    elif t.op == "*":
        v = a * b
    else:
        v = a / b
    return on_op(t, v) if on_op is not None else v
