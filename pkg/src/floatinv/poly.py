"""Sparse multivariate polynomials with exact rational coefficients.

Coefficients are either :class:`fractions.Fraction` or :class:`LinExpr`
(an affine expression over named unknowns, used for template
coefficients).  A product of two polynomials is only defined when at least
one side has purely numeric coefficients, which keeps every certificate
row affine in the unknowns.

Monomials are tuples of ``(variable, exponent)`` pairs sorted by variable
name, so they are hashable and canonical.
"""

from __future__ import annotations

import re
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Callable, Iterable, Iterator, Mapping, Union

Mono = tuple  # tuple[tuple[str, int], ...]
ONE: Mono = ()

Number = Union[int, Fraction]


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    return Fraction(value)


def mono_mul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    merged = dict(a)
    for v, e in b:
        merged[v] = merged.get(v, 0) + e
    return tuple(sorted(merged.items()))


def mono_degree(m: Mono) -> int:
    return sum(e for _, e in m)


def mono_key(m: Mono):
    """Graded lexicographic sort key."""
    return (mono_degree(m), m)


def mono_str(m: Mono) -> str:
    if not m:
        return "1"
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)


def monomials_upto(variables: Iterable[str], degree: int) -> list[Mono]:
    """All monomials over ``variables`` of total degree <= ``degree``.

    Order: by degree, then by the order in which ``variables`` is given
    (``[1, x, i, x^2, x*i, i^2]`` for ``(x, i)`` and degree 2).
    """
    names = list(variables)
    out: list[Mono] = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(len(names)), d):
            counts: dict[str, int] = {}
            for idx in combo:
                counts[names[idx]] = counts.get(names[idx], 0) + 1
            out.append(tuple(sorted(counts.items())))
    return out


class LinExpr:
    """Affine expression ``const + sum(coef * unknown)`` with rational data."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[str, Number] | None = None, const: Number = 0):
        self.terms: dict[str, Fraction] = {}
        if terms:
            for k, v in terms.items():
                v = as_fraction(v)
                if v:
                    self.terms[k] = v
        self.const = as_fraction(const)

    @classmethod
    def unknown(cls, name: str) -> "LinExpr":
        return cls({name: 1})

    def is_zero(self) -> bool:
        return not self.terms and self.const == 0

    def __bool__(self) -> bool:
        return not self.is_zero()

    def _lift(self, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            return other
        return LinExpr(None, other)

    def __add__(self, other) -> "LinExpr":
        other = self._lift(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0) + v
        return LinExpr(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other) -> "LinExpr":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "LinExpr":
        return self._lift(other) - self

    def __mul__(self, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            if other.terms and self.terms:
                raise TypeError("product of two affine expressions is not affine")
            if not other.terms:
                other = other.const
            else:
                return other * self.const
        c = as_fraction(other)
        if c == 0:
            return LinExpr()
        return LinExpr({k: v * c for k, v in self.terms.items()}, self.const * c)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        other = self._lift(other)
        return self.terms == other.terms and self.const == other.const

    def __hash__(self) -> int:
        return hash((frozenset(self.terms.items()), self.const))

    def evaluate(self, assignment: Mapping[str, Number]) -> Fraction:
        total = self.const
        for k, v in self.terms.items():
            total += v * as_fraction(assignment[k])
        return total

    def substitute(self, assignment: Mapping[str, Number]) -> "LinExpr":
        """Replace the given unknowns by numbers, keeping the rest symbolic."""
        terms = {}
        const = self.const
        for k, v in self.terms.items():
            if k in assignment:
                const += v * as_fraction(assignment[k])
            else:
                terms[k] = v
        return LinExpr(terms, const)

    def __repr__(self) -> str:
        parts = [f"{v}*{k}" for k, v in sorted(self.terms.items())]
        if self.const or not parts:
            parts.append(str(self.const))
        return " + ".join(parts)


def _is_zero(c) -> bool:
    if isinstance(c, LinExpr):
        return c.is_zero()
    return c == 0


class Poly:
    """Immutable sparse polynomial."""

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Mapping[Mono, object] | None = None):
        self.terms: dict[Mono, object] = {}
        if terms:
            for m, c in terms.items():
                if not isinstance(c, LinExpr):
                    c = as_fraction(c)
                if not _is_zero(c):
                    self.terms[m] = c
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def const(cls, c) -> "Poly":
        return cls({ONE: c})

    @classmethod
    def var(cls, name: str) -> "Poly":
        return cls({((name, 1),): Fraction(1)})

    @classmethod
    def from_terms(cls, pairs: Iterable[tuple[Mono, object]]) -> "Poly":
        acc: dict[Mono, object] = {}
        for m, c in pairs:
            acc[m] = acc[m] + c if m in acc else c
        return cls(acc)

    # -- queries --------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    def is_numeric(self) -> bool:
        return not any(isinstance(c, LinExpr) for c in self.terms.values())

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def degree_in(self, names: Iterable[str]) -> int:
        names = set(names)
        return max((sum(e for v, e in m if v in names) for m in self.terms), default=0)

    def variables(self) -> set[str]:
        return {v for m in self.terms for v, _ in m}

    def coeff(self, m: Mono):
        return self.terms.get(m, Fraction(0))

    def constant_term(self):
        return self.terms.get(ONE, Fraction(0))

    def sorted_terms(self) -> list[tuple[Mono, object]]:
        return sorted(self.terms.items(), key=lambda t: mono_key(t[0]))

    def __iter__(self) -> Iterator[tuple[Mono, object]]:
        return iter(self.sorted_terms())

    def __len__(self) -> int:
        return len(self.terms)

    # -- arithmetic ---------------------------------------------------------
    @staticmethod
    def _lift(other) -> "Poly":
        if isinstance(other, Poly):
            return other
        return Poly.const(other)

    def __add__(self, other) -> "Poly":
        other = Poly._lift(other)
        acc = dict(self.terms)
        for m, c in other.terms.items():
            acc[m] = acc[m] + c if m in acc else c
        return Poly(acc)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        return self + (-Poly._lift(other))

    def __rsub__(self, other) -> "Poly":
        return Poly._lift(other) - self

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            if isinstance(other, LinExpr):
                if not self.is_numeric():
                    raise TypeError("product of two parametric polynomials")
                return Poly({m: other * c for m, c in self.terms.items()})
            c = as_fraction(other)
            return Poly({m: v * c for m, v in self.terms.items()})
        if not self.terms or not other.terms:
            return Poly()
        if not self.is_numeric() and not other.is_numeric():
            raise TypeError("product of two parametric polynomials")
        acc: dict[Mono, object] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = mono_mul(m1, m2)
                prod = c1 * c2 if not isinstance(c2, LinExpr) else c2 * c1
                acc[m] = acc[m] + prod if m in acc else prod
        return Poly(acc)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if k < 0:
            raise ValueError("negative power")
        result = Poly.const(1)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            other = Poly.const(other)
        return self.terms == other.terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset((m, c) for m, c in self.terms.items()))
        return self._hash

    # -- transformations ----------------------------------------------------
    def subs(self, mapping: Mapping[str, "Poly"]) -> "Poly":
        """Simultaneous substitution of variables by polynomials."""
        if not mapping:
            return self
        cache: dict[tuple[str, int], Poly] = {}

        def power(v: str, e: int) -> Poly:
            key = (v, e)
            if key not in cache:
                cache[key] = mapping[v] ** e
            return cache[key]

        result = Poly()
        acc: dict[Mono, object] = {}
        for m, c in self.terms.items():
            kept = []
            factor = None
            for v, e in m:
                if v in mapping:
                    p = power(v, e)
                    factor = p if factor is None else factor * p
                else:
                    kept.append((v, e))
            kept_mono = tuple(kept)
            if factor is None:
                acc[kept_mono] = acc[kept_mono] + c if kept_mono in acc else c
                continue
            for m2, c2 in factor.terms.items():
                mm = mono_mul(kept_mono, m2)
                prod = c * c2 if not isinstance(c, LinExpr) else c * c2
                acc[mm] = acc[mm] + prod if mm in acc else prod
        result = Poly(acc)
        return result

    def rename(self, mapping: Mapping[str, str]) -> "Poly":
        acc: dict[Mono, object] = {}
        for m, c in self.terms.items():
            mm = tuple(sorted((mapping.get(v, v), e) for v, e in m))
            acc[mm] = acc[mm] + c if mm in acc else c
        return Poly(acc)

    def map_coeffs(self, fn: Callable[[object], object]) -> "Poly":
        return Poly({m: fn(c) for m, c in self.terms.items()})

    def instantiate(self, assignment: Mapping[str, Number]) -> "Poly":
        """Evaluate parametric coefficients under ``assignment``."""
        return self.map_coeffs(
            lambda c: c.evaluate(assignment) if isinstance(c, LinExpr) else c
        )

    def evaluate(self, env: Mapping[str, object]):
        """Evaluate at a point.

        With all-Fraction inputs the result is exact; otherwise coefficients
        are converted to float so numpy arrays broadcast cleanly.
        """
        exact = all(isinstance(env[v], (int, Fraction)) for v in self.variables())
        total = 0
        for m, c in self.terms.items():
            term = c if exact or isinstance(c, LinExpr) else float(c)
            for v, e in m:
                term = term * env[v] ** e
            total = total + term
        return total

    def split_by(self, names: Iterable[str]) -> dict[Mono, "Poly"]:
        """Group terms by their monomial part over ``names``.

        Returns ``{outer_mono: inner_poly}`` where ``inner_poly`` collects the
        remaining variables; used to treat some variables as parameters.
        """
        names = set(names)
        groups: dict[Mono, dict[Mono, object]] = {}
        for m, c in self.terms.items():
            outer = tuple((v, e) for v, e in m if v in names)
            inner = tuple((v, e) for v, e in m if v not in names)
            g = groups.setdefault(outer, {})
            g[inner] = g[inner] + c if inner in g else c
        return {k: Poly(v) for k, v in groups.items()}

    def max_abs_coeff(self) -> Fraction:
        if not self.is_numeric():
            raise TypeError("parametric polynomial")
        return max((abs(c) for c in self.terms.values()), default=Fraction(0))

    def __str__(self) -> str:
        return poly_str(self)

    def __repr__(self) -> str:
        return f"Poly({poly_str(self)})"


def _coeff_str(c) -> str:
    if isinstance(c, LinExpr):
        return f"({c!r})"
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def poly_str(p: Poly) -> str:
    """Canonical text: graded-lex monomial order, exact rational coefficients."""
    if p.is_zero():
        return "0"
    parts = []
    for m, c in p.sorted_terms():
        if m == ONE:
            parts.append(_coeff_str(c))
        elif not isinstance(c, LinExpr) and c == 1:
            parts.append(mono_str(m))
        elif not isinstance(c, LinExpr) and c == -1:
            parts.append("-" + mono_str(m))
        else:
            parts.append(f"{_coeff_str(c)}*{mono_str(m)}")
    text = " + ".join(parts)
    return text.replace("+ -", "- ")


def float_poly_str(p: Poly, digits: int = 10) -> str:
    """Readable text with decimal coefficients (for reports)."""
    if p.is_zero():
        return "0"
    parts = []
    for m, c in p.sorted_terms():
        val = f"{float(c):.{digits}g}"
        parts.append(val if m == ONE else f"{val}*{mono_str(m)}")
    return " + ".join(parts).replace("+ -", "- ")


_TERM_RE = re.compile(r"([+-]?)\s*([0-9]+(?:/[0-9]+)?(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?)?\s*\*?\s*"
                      r"((?:[A-Za-z_][\w']*(?:\^[0-9]+)?\s*\*?\s*)*)$")


def parse_poly(text: str) -> Poly:
    """Inverse of ``poly_str`` (numeric coefficients only)."""
    text = text.strip()
    if not text:
        raise ValueError("empty polynomial")
    chunks = re.split(r"\s+(?=[+-]\s)", text)
    out = Poly()
    for chunk in chunks:
        m = _TERM_RE.fullmatch(chunk.strip())
        if not m or (m.group(2) is None and not m.group(3).strip()):
            raise ValueError(f"bad polynomial term {chunk!r}")
        sign, coef, mono_text = m.groups()
        c = Fraction(coef) if coef else Fraction(1)
        if sign == "-":
            c = -c
        term = Poly.const(c)
        for factor in re.findall(r"([A-Za-z_][\w']*)(?:\^([0-9]+))?", mono_text):
            term = term * Poly.var(factor[0]) ** int(factor[1] or 1)
        out = out + term
    return out


class RatFunc:
    """Quotient ``num / den`` of numeric polynomials (no normalization)."""

    __slots__ = ("num", "den")

    def __init__(self, num: Poly, den: Poly | None = None):
        self.num = num
        self.den = den if den is not None else Poly.const(1)
        if self.den.is_zero():
            raise ZeroDivisionError("zero denominator")

    @property
    def is_polynomial(self) -> bool:
        return self.den.degree() == 0

    def as_poly(self) -> Poly:
        if not self.is_polynomial:
            raise ValueError("not a polynomial")
        return self.num * (1 / self.den.constant_term())

    def __add__(self, other: "RatFunc") -> "RatFunc":
        if self.den == other.den:
            return RatFunc(self.num + other.num, self.den)
        return RatFunc(self.num * other.den + other.num * self.den, self.den * other.den)

    def __sub__(self, other: "RatFunc") -> "RatFunc":
        return self + (-other)

    def __neg__(self) -> "RatFunc":
        return RatFunc(-self.num, self.den)

    def __mul__(self, other: "RatFunc") -> "RatFunc":
        return RatFunc(self.num * other.num, self.den * other.den)

    def __truediv__(self, other: "RatFunc") -> "RatFunc":
        return RatFunc(self.num * other.den, self.den * other.num)

    def normalized(self) -> "RatFunc":
        """Fold a constant denominator into the numerator."""
        if self.is_polynomial:
            return RatFunc(self.as_poly())
        return self

    def __repr__(self) -> str:
        return f"({self.num}) / ({self.den})"
