"""Handelman linearization.

A polynomial ``p`` is certified nonnegative on ``{h_1 >= 0, ..., h_k >= 0}``
by writing ``p = sum_j lambda_j g_j`` with ``lambda_j >= 0`` and every
``g_j`` a product of at most ``m`` premises.  Matching coefficients of
every monomial turns the identity into linear equalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Iterable, Optional, Sequence

from .poly import LinExpr, Poly, mono_str, poly_str
from .templates import Implication


@dataclass(frozen=True)
class ProductBasis:
    theta: tuple  # premise polynomials
    products: tuple  # expanded products, the empty product first
    factors: tuple  # index multiset of theta per product
    m: int

    def __len__(self) -> int:
        return len(self.products)


def enumerate_products(theta: Sequence[Poly], m: int, max_degree: Optional[int] = None,
                       dedup: bool = True) -> ProductBasis:
    """All products of at most ``m`` premises (multisets, with repetition).

    Products whose degree exceeds ``max_degree`` are skipped; syntactically
    equal expansions are kept once.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    theta = tuple(theta)
    degs = [h.degree() for h in theta]
    products: list[Poly] = []
    factors: list[tuple] = []
    seen: set = set()
    cache: dict[tuple, Poly] = {(): Poly.const(1)}
    for size in range(m + 1):
        for combo in combinations_with_replacement(range(len(theta)), size):
            if max_degree is not None and sum(degs[i] for i in combo) > max_degree:
                continue
            prefix = combo[:-1]
            if prefix not in cache:
                prod = Poly.const(1)
                for i in prefix:
                    prod = prod * theta[i]
                cache[prefix] = prod
            g = cache[prefix] * theta[combo[-1]] if combo else cache[()]
            if size < m:
                cache[combo] = g
            if dedup:
                if g in seen or g.is_zero():
                    continue
                seen.add(g)
            products.append(g)
            factors.append(combo)
    return ProductBasis(theta, tuple(products), tuple(factors), m)


@dataclass
class Certificate:
    """Bookkeeping for one implication inside the assembled system."""

    constraint: Implication
    basis: ProductBasis
    lambdas: list  # names, parallel to basis.products


@dataclass
class LinearCertSystem:
    free: list = field(default_factory=list)  # template unknowns
    nonneg: list = field(default_factory=list)  # lambda variables
    rows: list = field(default_factory=list)  # (dict var -> Fraction, rhs Fraction)
    certificates: list = field(default_factory=list)

    @property
    def term_size(self) -> int:
        return len(self.nonneg)

    def extend(self, other: "LinearCertSystem") -> "LinearCertSystem":
        out = LinearCertSystem(list(self.free), list(self.nonneg), list(self.rows), list(self.certificates))
        for v in other.free:
            if v not in out.free:
                out.free.append(v)
        out.nonneg += other.nonneg
        out.rows += other.rows
        out.certificates += other.certificates
        return out

    def dump(self) -> str:
        """Text LP-equality format (see ``lp.parse_lp``)."""
        lines = []
        for v in self.free:
            lines.append(f"free {v}")
        for r, rhs in self.rows:
            terms = " + ".join(f"{_q(c)}*{v}" for v, c in r.items()) or "0"
            lines.append(f"{terms} = {_q(rhs)}")
        for v in self.nonneg:
            lines.append(f"{v} >= 0")
        return "\n".join(lines) + "\n"


def _q(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def match_coefficients(constraint: Implication, basis: ProductBasis, prefix: str = "lam",
                       start: int = 0) -> LinearCertSystem:
    """Equalities ``sum_j lambda_j g_j[mono] = p[mono]`` for every monomial."""
    lambdas = [f"{prefix}_{start + j}" for j in range(len(basis.products))]
    rows: dict = {}
    for name, g in zip(lambdas, basis.products):
        for mono, c in g.terms.items():
            rows.setdefault(mono, ({}, LinExpr()))[0][name] = c
    for mono, c in constraint.conclusion.terms.items():
        entry = rows.setdefault(mono, ({}, LinExpr()))
        rows[mono] = (entry[0], entry[1] + c)
    free: list[str] = []
    out_rows = []
    for mono in sorted(rows, key=lambda m: (sum(e for _, e in m), m)):
        lam_part, concl = rows[mono]
        if not isinstance(concl, LinExpr):
            concl = LinExpr(None, concl)
        row = dict(lam_part)
        # sum lambda g - sum_k a_k c_k = const
        for v, a in concl.terms.items():
            row[v] = row.get(v, 0) - a
            if v not in free:
                free.append(v)
        row = {v: Fraction(a) for v, a in row.items() if a != 0}
        if not row and concl.const == 0:
            continue
        out_rows.append((row, concl.const))
    return LinearCertSystem(free, lambdas, out_rows, [Certificate(constraint, basis, lambdas)])


def assemble(constraints: Iterable[Implication], m: int, degree_cap: Optional[int] = None,
             extra_theta: Sequence[Poly] = (), prefix: str = "lam", start: int = 0) -> LinearCertSystem:
    """Linearize every implication and concatenate the systems."""
    system = LinearCertSystem()
    idx = start
    for c in constraints:
        theta = list(c.premises) + [h for h in extra_theta if h.variables() <= c.variables()]
        cap = degree_cap
        if cap is None:
            cap = max([c.conclusion.degree()] + [h.degree() for h in theta])
        basis = enumerate_products(theta, m, cap)
        sub = match_coefficients(c, basis, prefix, idx)
        idx += len(basis.products)
        system = system.extend(sub)
    return system


def residual(cert: Certificate, values: dict) -> Fraction:
    """Max coefficient of ``p - sum lambda_j g_j`` at the given assignment,
    computed exactly."""
    p = cert.constraint.conclusion.instantiate(values)
    acc: dict = dict(p.terms)
    for name, g in zip(cert.lambdas, cert.basis.products):
        lam = values.get(name, Fraction(0))
        if lam == 0:
            continue
        for mono, c in g.terms.items():
            acc[mono] = acc.get(mono, 0) - lam * c
    return max((abs(c) for c in acc.values()), default=Fraction(0))


def describe_product(basis: ProductBasis, j: int) -> str:
    if not basis.factors[j]:
        return "1"
    return " * ".join(f"({poly_str(basis.theta[i])})" for i in basis.factors[j])
