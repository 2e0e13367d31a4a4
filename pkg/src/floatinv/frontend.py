"""Parser for the annotated while-language.

Grammar (one program per file)::

    #precondition: <atom> (&& <atom>)*
    #coarse: <var> in [lo, hi] (, <var> in [lo, hi])*
    #target: <var>
    #iterations: <n>
    int n = e;   float n = e;   float n;
    n = e;   if (c) { ... } else { ... }   while (c) { ... }

Expressions use ``+ - * /``, parentheses and ``^k``.  Conditions combine
comparisons with ``&& || !``; ``True`` stands for ``0 <= 0``.  ``//`` starts
a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .fpformat import round_to_format
from .terms import (
    FLOAT,
    INT,
    BinOp,
    Const,
    Neg,
    Term,
    Var,
    make_binop,
    term_str,
    term_vars,
    to_ratfunc,
)


class FrontendError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        loc = f"{line}:{col}: " if line else ""
        super().__init__(f"{loc}{message}")
        self.line = line
        self.col = col


# -- conditions ---------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """``left rel right`` with rel one of ``<=``, ``<``, ``==``."""

    left: Term
    rel: str
    right: Term

    def __str__(self) -> str:
        return f"{term_str(self.left)} {self.rel} {term_str(self.right)}"


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


@dataclass(frozen=True)
class Not:
    arg: object


Cond = Atom | And | Or | Not

TRUE_ATOM = Atom(Const(Fraction(0), INT), "<=", Const(Fraction(0), INT))
FALSE_ATOM = Atom(Const(Fraction(1), INT), "<=", Const(Fraction(0), INT))


def negate_atom(a: Atom) -> list[list[Atom]]:
    """DNF of the negation of one atom."""
    if a.rel == "<=":
        return [[Atom(a.right, "<", a.left)]]
    if a.rel == "<":
        return [[Atom(a.right, "<=", a.left)]]
    return [[Atom(a.left, "<", a.right)], [Atom(a.right, "<", a.left)]]


def dnf(c: Cond, negated: bool = False) -> list[list[Atom]]:
    """Disjunctive normal form with only ``<=`` and ``<`` atoms."""
    if isinstance(c, Atom):
        if negated:
            return negate_atom(c)
        if c.rel == "==":
            return [[Atom(c.left, "<=", c.right), Atom(c.right, "<=", c.left)]]
        return [[c]]
    if isinstance(c, Not):
        return dnf(c.arg, not negated)
    conj = isinstance(c, And) != negated
    parts = [dnf(p, negated) for p in c.parts]
    if not conj:
        return [clause for p in parts for clause in p]
    out: list[list[Atom]] = [[]]
    for p in parts:
        out = [a + b for a in out for b in p]
    return out


def cond_str(c: Cond, parent: int = 0) -> str:
    if isinstance(c, Atom):
        return str(c)
    if isinstance(c, Not):
        return f"!({cond_str(c.arg)})"
    prec = 2 if isinstance(c, And) else 1
    sep = " && " if isinstance(c, And) else " || "
    text = sep.join(cond_str(p, prec) for p in c.parts)
    return f"({text})" if prec < parent or len(c.parts) == 1 else text


# -- statements -------------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Term
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class If:
    cond: Cond
    then: tuple
    orelse: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class While:
    cond: Cond
    body: tuple
    line: int = field(default=0, compare=False)


Stmt = Assign | If | While


@dataclass(frozen=True)
class SourceProgram:
    declarations: tuple  # ((name, kind), ...)
    body: tuple
    precondition: tuple  # Atoms with rel in {'<=', '<'}
    coarse: tuple = ()  # ((name, lo, hi), ...)
    target: Optional[str] = None
    iterations: Optional[int] = None
    name: str = field(default="program", compare=False)
    fmt: str = field(default="f32", compare=False)

    @property
    def kinds(self) -> dict[str, str]:
        return dict(self.declarations)

    @property
    def variables(self) -> list[str]:
        return [n for n, _ in self.declarations]

    def coarse_box(self) -> dict[str, tuple[Fraction, Fraction]]:
        return {n: (lo, hi) for n, lo, hi in self.coarse}


# -- lexer ----------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|&&|\|\||[-+*/^()<>{}\[\];=,!])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"int", "float", "if", "else", "while", "True", "true", "False", "false", "in"}


@dataclass
class Token:
    kind: str  # num, name, op, kw, eof
    text: str
    line: int
    col: int


def tokenize(text: str, line: int = 1, col0: int = 1) -> list[Token]:
    toks: list[Token] = []
    for lineno, raw in enumerate(text.split("\n"), start=line):
        code = raw.split("//", 1)[0]
        pos = 0
        while pos < len(code):
            m = _TOKEN.match(code, pos)
            if not m:
                raise FrontendError(f"unexpected character {code[pos]!r}", lineno, pos + col0)
            kind = m.lastgroup
            if kind != "ws":
                txt = m.group()
                if kind == "name" and txt in _KEYWORDS:
                    kind = "kw"
                toks.append(Token(kind, txt, lineno, pos + col0))
            pos = m.end()
        col0 = 1
    last = toks[-1] if toks else Token("eof", "", line, col0)
    toks.append(Token("eof", "", last.line, last.col + len(last.text)))
    return toks


# -- parser --------------------------------------------------------------------------

_RELS = {"<=", "<", ">=", ">", "==", "!="}


class _Parser:
    def __init__(self, tokens: list[Token], fmt: str, round_consts: bool = True):
        self.toks = tokens
        self.pos = 0
        self.fmt = fmt
        self.round_consts = round_consts

    # helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> FrontendError:
        tok = tok or self.tok
        return FrontendError(msg, tok.line, tok.col)

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text in texts

    def advance(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            got = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, got {got!r}")
        return self.advance()

    def name(self) -> Token:
        if self.tok.kind != "name":
            raise self.error(f"expected identifier, got {self.tok.text or 'end of input'!r}")
        return self.advance()

    # expressions
    def expr(self) -> Term:
        left = self.term()
        while self.at("+", "-"):
            op = self.advance().text
            left = make_binop(op, left, self.term())
        return left

    def term(self) -> Term:
        left = self.unary()
        while self.at("*", "/"):
            op = self.advance().text
            left = make_binop(op, left, self.unary())
        return left

    def unary(self) -> Term:
        if self.at("-"):
            self.advance()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value, arg.kind)
            return Neg(arg)
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Term:
        base = self.primary()
        if self.at("^"):
            self.advance()
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                raise self.error("exponent must be a non-negative integer literal")
            self.advance()
            k = int(tok.text)
            if k == 0:
                return Const(Fraction(1), base.kind)
            out = base
            for _ in range(k - 1):
                out = make_binop("*", out, base)
            return out
        return base

    def primary(self) -> Term:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return self.literal(tok.text)
        if tok.kind == "name":
            self.advance()
            if self.at("("):
                raise self.error(f"function calls are not supported ({tok.text})", tok)
            return Var(tok.text, FLOAT)
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        raise self.error(f"expected expression, got {tok.text or 'end of input'!r}")

    def literal(self, text: str) -> Const:
        value = Fraction(text)
        if re.fullmatch(r"\d+", text):
            return Const(value, INT)
        if self.round_consts:
            value = round_to_format(value, self.fmt)
        return Const(value, FLOAT)

    # conditions
    def cond(self) -> Cond:
        parts = [self.cond_and()]
        while self.at("||"):
            self.advance()
            parts.append(self.cond_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def cond_and(self) -> Cond:
        parts = [self.cond_not()]
        while self.at("&&"):
            self.advance()
            parts.append(self.cond_not())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def cond_not(self) -> Cond:
        if self.at("!"):
            self.advance()
            return Not(self.cond_not())
        if self.at("True", "true"):
            self.advance()
            return TRUE_ATOM
        if self.at("False", "false"):
            self.advance()
            return FALSE_ATOM
        if self.at("("):
            save = self.pos
            try:
                self.advance()
                c = self.cond()
                self.expect(")")
                if not (self.tok.kind == "op" and self.tok.text in _RELS | {"+", "-", "*", "/", "^"}):
                    return c
            except FrontendError:
                pass
            self.pos = save
        return self.comparison()

    def comparison(self) -> Cond:
        first = self.expr()
        if self.tok.kind == "kw" and self.tok.text == "in":
            self.advance()
            self.expect("[")
            lo = self.expr()
            self.expect(",")
            hi = self.expr()
            self.expect("]")
            return And((Atom(lo, "<=", first), Atom(first, "<=", hi)))
        atoms = []
        left = first
        while self.tok.kind == "op" and self.tok.text in _RELS:
            rel = self.advance().text
            right = self.expr()
            atoms.append(_make_atom(left, rel, right))
            left = right
        if not atoms:
            raise self.error("expected comparison operator")
        return atoms[0] if len(atoms) == 1 else And(tuple(atoms))

    # statements
    def block(self) -> tuple:
        self.expect("{")
        out = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block")
            out.extend(self.statement())
        self.expect("}")
        return tuple(out)

    def statement(self) -> list:
        tok = self.tok
        if self.at("while"):
            self.advance()
            self.expect("(")
            c = self.cond()
            self.expect(")")
            return [While(c, self.block(), tok.line)]
        if self.at("if"):
            self.advance()
            self.expect("(")
            c = self.cond()
            self.expect(")")
            then = self.block()
            orelse: tuple = ()
            if self.at("else"):
                self.advance()
                if self.at("if"):
                    orelse = tuple(self.statement())
                else:
                    orelse = self.block()
            return [If(c, then, orelse, tok.line)]
        if self.at("int", "float"):
            raise self.error("declarations must precede statements")
        name = self.name()
        self.expect("=")
        e = self.expr()
        self.expect(";")
        return [Assign(name.text, e, name.line)]


def _make_atom(left: Term, rel: str, right: Term) -> Cond:
    if rel == ">=":
        return Atom(right, "<=", left)
    if rel == ">":
        return Atom(right, "<", left)
    if rel == "!=":
        return Not(Atom(left, "==", right))
    return Atom(left, rel, right)


def _const_value(t: Term) -> Optional[Fraction]:
    if term_vars(t):
        return None
    if isinstance(t, Const):
        return t.value
    return None


def _exact_const(t: Term, where: Token) -> Fraction:
    if term_vars(t):
        raise FrontendError("expected a constant", where.line, where.col)
    rf = to_ratfunc(t)
    return rf.as_poly().constant_term()


# -- entry points ----------------------------------------------------------------------


def parse_program(text: str, fmt: str = "f32", name: str = "program") -> SourceProgram:
    """Parse and kind-check a program."""
    pragma_lines: list[tuple[int, str]] = []
    code_lines: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            pragma_lines.append((lineno, line))
            code_lines.append("")
        else:
            code_lines.append(line)

    precondition_src: list[Atom] = []
    coarse: list[tuple[str, Fraction, Fraction]] = []
    target = None
    iterations = None
    seen_pre = False
    for lineno, line in pragma_lines:
        col = line.index("#") + 1
        body = line[col:]
        m = re.match(r"\s*(\w+)\s*:", body)
        if not m:
            raise FrontendError("malformed pragma", lineno, col)
        key = m.group(1)
        rest_col = col + m.end() + 1
        toks = tokenize(body[m.end():], lineno, rest_col)
        p = _Parser(toks, fmt, round_consts=False)
        if key == "precondition":
            seen_pre = True
            c = p.cond()
            for clause in [c]:
                precondition_src.extend(_conjunction_atoms(clause, lineno, col))
        elif key == "coarse":
            while True:
                vt = p.name()
                if not (p.tok.kind == "kw" and p.tok.text == "in"):
                    raise p.error("expected 'in'")
                p.advance()
                p.expect("[")
                lt = p.tok
                lo = _exact_const(p.expr(), lt)
                p.expect(",")
                ht = p.tok
                hi = _exact_const(p.expr(), ht)
                p.expect("]")
                if lo > hi:
                    raise FrontendError(f"empty coarse range for {vt.text}", vt.line, vt.col)
                coarse.append((vt.text, lo, hi))
                if not p.at(","):
                    break
                p.advance()
        elif key == "target":
            target = p.name().text
        elif key == "iterations":
            t = p.tok
            if t.kind != "num" or not t.text.isdigit():
                raise p.error("iteration bound must be a non-negative integer")
            p.advance()
            iterations = int(t.text)
        else:
            raise FrontendError(f"unknown pragma {key!r}", lineno, col)
        if p.tok.kind != "eof":
            raise p.error(f"unexpected {p.tok.text!r} in pragma")
    if not seen_pre:
        raise FrontendError("missing #precondition pragma", 1, 1)

    p = _Parser(tokenize("\n".join(code_lines)), fmt)
    decls: list[tuple[str, str]] = []
    init_stmts: list[Assign] = []
    init_atoms: list[Atom] = []
    while p.at("int", "float"):
        kind = p.advance().text
        nt = p.name()
        if nt.text in dict(decls):
            raise FrontendError(f"variable {nt.text!r} declared twice", nt.line, nt.col)
        decls.append((nt.text, kind))
        if p.at("="):
            p.advance()
            e = p.expr()
            value = _const_value(e)
            if value is not None:
                if kind == INT and value.denominator != 1:
                    raise FrontendError(f"int variable {nt.text!r} initialized with a float", nt.line, nt.col)
                v = Var(nt.text, kind)
                init_atoms.append(Atom(v, "==", Const(value, kind)))
            else:
                init_stmts.append(Assign(nt.text, e, nt.line))
        p.expect(";")
    body: list = list(init_stmts)
    while p.tok.kind != "eof":
        body.extend(p.statement())

    kinds = dict(decls)
    pre_names = set()
    for a in precondition_src:
        pre_names |= term_vars(a.left) | term_vars(a.right)
    for a in init_atoms:
        if a.left.name in pre_names:
            raise FrontendError(f"{a.left.name!r} is both initialized and constrained by #precondition")
    atoms: list[Atom] = []
    for a in init_atoms + precondition_src:
        for clause in dnf(a):
            atoms.extend(clause)

    prog = SourceProgram(
        declarations=tuple(decls),
        body=tuple(body),
        precondition=tuple(atoms),
        coarse=tuple(coarse),
        target=target,
        iterations=iterations,
        name=name,
        fmt=fmt,
    )
    _check_declared(prog)
    return classify_kinds(prog)


def _conjunction_atoms(c: Cond, line: int, col: int) -> list[Atom]:
    clauses = dnf(c)
    if len(clauses) != 1:
        raise FrontendError("precondition must be a conjunction", line, col)
    return clauses[0]


def _check_declared(prog: SourceProgram) -> None:
    declared = set(prog.kinds)
    used: set[str] = set()

    def cond_vars(c) -> set[str]:
        if isinstance(c, Atom):
            return term_vars(c.left) | term_vars(c.right)
        if isinstance(c, Not):
            return cond_vars(c.arg)
        return set().union(*(cond_vars(x) for x in c.parts))

    def walk(stmts):
        for s in stmts:
            if isinstance(s, Assign):
                used.add(s.name)
                used.update(term_vars(s.expr))
            elif isinstance(s, If):
                used.update(cond_vars(s.cond))
                walk(s.then)
                walk(s.orelse)
            else:
                used.update(cond_vars(s.cond))
                walk(s.body)

    walk(prog.body)
    for a in prog.precondition:
        used |= cond_vars(a)
    used.update(n for n, _, _ in prog.coarse)
    if prog.target:
        used.add(prog.target)
    missing = sorted(used - declared)
    if missing:
        raise FrontendError(f"undeclared variable {missing[0]!r}")


def _rekind(t: Term, kinds: dict[str, str]) -> Term:
    if isinstance(t, Var):
        return Var(t.name, kinds[t.name])
    if isinstance(t, Const):
        return t
    if isinstance(t, Neg):
        return Neg(_rekind(t.arg, kinds))
    return make_binop(t.op, _rekind(t.left, kinds), _rekind(t.right, kinds))


def _rekind_cond(c, kinds):
    if isinstance(c, Atom):
        return Atom(_rekind(c.left, kinds), c.rel, _rekind(c.right, kinds))
    if isinstance(c, Not):
        return Not(_rekind_cond(c.arg, kinds))
    return type(c)(tuple(_rekind_cond(p, kinds) for p in c.parts))


def classify_kinds(prog: SourceProgram, kinds: dict[str, str] | None = None) -> SourceProgram:
    """Attach int/float kinds to every node from the declarations.

    An operation is rounding-free iff both operands are int and it is not a
    division.  Assigning a float expression to an int variable is an error.
    """
    kinds = dict(kinds or prog.kinds)

    def walk(stmts):
        out = []
        for s in stmts:
            if isinstance(s, Assign):
                e = _rekind(s.expr, kinds)
                if kinds[s.name] == INT and e.kind != INT:
                    raise FrontendError(f"int variable {s.name!r} assigned a float expression", s.line, 1)
                out.append(Assign(s.name, e, s.line))
            elif isinstance(s, If):
                out.append(If(_rekind_cond(s.cond, kinds), walk(s.then), walk(s.orelse), s.line))
            else:
                out.append(While(_rekind_cond(s.cond, kinds), walk(s.body), s.line))
        return tuple(out)

    return SourceProgram(
        declarations=tuple((n, kinds[n]) for n, _ in prog.declarations),
        body=walk(prog.body),
        precondition=tuple(_rekind_cond(a, kinds) for a in prog.precondition),
        coarse=prog.coarse,
        target=prog.target,
        iterations=prog.iterations,
        name=prog.name,
        fmt=prog.fmt,
    )


# -- pretty printer -----------------------------------------------------------------------


def program_str(prog: SourceProgram) -> str:
    """Source text that parses back to an identical program."""
    lines = []
    pre = " && ".join(str(a) for a in prog.precondition) or "True"
    lines.append(f"#precondition: {pre}")
    if prog.coarse:
        from .terms import const_str

        parts = [f"{n} in [{const_str(lo)}, {const_str(hi)}]" for n, lo, hi in prog.coarse]
        lines.append("#coarse: " + ", ".join(parts))
    if prog.target:
        lines.append(f"#target: {prog.target}")
    if prog.iterations is not None:
        lines.append(f"#iterations: {prog.iterations}")
    for n, k in prog.declarations:
        lines.append(f"{k} {n};")

    def emit(stmts: Sequence, indent: int):
        pad = "    " * indent
        for s in stmts:
            if isinstance(s, Assign):
                lines.append(f"{pad}{s.name} = {term_str(s.expr)};")
            elif isinstance(s, If):
                lines.append(f"{pad}if ({cond_str(s.cond)}) {{")
                emit(s.then, indent + 1)
                lines.append(f"{pad}}} else {{")
                emit(s.orelse, indent + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}while ({cond_str(s.cond)}) {{")
                emit(s.body, indent + 1)
                lines.append(f"{pad}}}")

    emit(prog.body, 0)
    return "\n".join(lines) + "\n"


def parse_file(path, fmt: str = "f32") -> SourceProgram:
    from pathlib import Path

    path = Path(path)
    return parse_program(path.read_text(encoding="utf-8"), fmt=fmt, name=path.stem)
