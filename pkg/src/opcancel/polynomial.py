"""Multivariate polynomials and polynomial matrices over the rationals.

Polynomials are sparse maps from exponent tuples to :class:`Fraction`.  The
only division ever performed is exact division, used by fraction-free
(Bareiss) elimination.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


class Poly:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms=None):
        self.nvars = nvars
        self.terms: dict[tuple[int, ...], Fraction] = {}
        if terms:
            for exps, c in terms.items():
                c = Fraction(c)
                if c:
                    self.terms[tuple(exps)] = self.terms.get(tuple(exps), 0) + c

    @classmethod
    def constant(cls, nvars: int, c) -> "Poly":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def monomial(cls, exps: Sequence[int], c=1) -> "Poly":
        return cls(len(exps), {tuple(exps): c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Poly":
        exps = [0] * nvars
        exps[i] = 1
        return cls.monomial(exps)

    def copy(self) -> "Poly":
        p = Poly(self.nvars)
        p.terms = dict(self.terms)
        return p

    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def degrees(self) -> set[int]:
        return {sum(e) for e in self.terms}

    @property
    def degree(self) -> int:
        return max(self.degrees(), default=-1)

    def is_homogeneous(self, degree: int | None = None) -> bool:
        degs = self.degrees()
        if not degs:
            return True
        return len(degs) == 1 and (degree is None or degs == {degree})

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.nvars, other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            s = out.get(e, 0) + c
            if s:
                out[e] = s
            else:
                out.pop(e, None)
        p = Poly(self.nvars)
        p.terms = out
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Poly(self.nvars)
        p.terms = {e: -c for e, c in self.terms.items()}
        return p

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            other = Fraction(other)
            p = Poly(self.nvars)
            if other:
                p.terms = {e: c * other for e, c in self.terms.items()}
            return p
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        p = Poly(self.nvars)
        p.terms = {e: c for e, c in out.items() if c}
        return p

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.nvars, other)
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def leading(self):
        e = max(self.terms)
        return e, self.terms[e]

    def divexact(self, other: "Poly") -> "Poly":
        """Exact quotient ``self / other``; raises ``ArithmeticError`` on a nonzero remainder."""
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        q = Poly(self.nvars)
        r = self.copy()
        le, lc = other.leading()
        while r:
            e, c = r.leading()
            diff = tuple(a - b for a, b in zip(e, le))
            if any(d < 0 for d in diff):
                raise ArithmeticError("inexact polynomial division")
            t = Poly.monomial(diff, c / lc)
            q = q + t
            r = r - t * other
        return q

    def evaluate(self, point: Sequence):
        """Evaluate at a point; exact when the point is rational."""
        total = 0
        for e, c in self.terms.items():
            m = c
            for x, k in zip(point, e):
                if k:
                    m = m * x**k
            total = total + m
        return total

    def evaluate_float(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.zeros(points.shape[0])
        for e, c in self.terms.items():
            out += float(c) * np.prod(points ** np.array(e), axis=1)
        return out

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, reverse=True):
            c = self.terms[e]
            mono = "*".join(f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k)
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    __repr__ = __str__


PolyRows = list[list[Poly]]


def matmul(a: PolyRows, b: PolyRows) -> PolyRows:
    nvars = a[0][0].nvars
    out = []
    for i in range(len(a)):
        row = []
        for j in range(len(b[0])):
            s = Poly(nvars)
            for l in range(len(b)):
                if a[i][l] and b[l][j]:
                    s = s + a[i][l] * b[l][j]
            row.append(s)
        out.append(row)
    return out


def transpose(a: PolyRows) -> PolyRows:
    return [list(col) for col in zip(*a)]


def bareiss_det(mat: PolyRows) -> Poly:
    """Determinant by fraction-free Bareiss elimination."""
    m = len(mat)
    nvars = mat[0][0].nvars
    a = [[p.copy() for p in row] for row in mat]
    sign = 1
    prev = Poly.constant(nvars, 1)
    for k in range(m - 1):
        if a[k][k].is_zero():
            swap = next((i for i in range(k + 1, m) if a[i][k]), None)
            if swap is None:
                return Poly(nvars)
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, m):
            for j in range(k + 1, m):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]).divexact(prev)
        prev = a[k][k]
    det = a[m - 1][m - 1]
    return det if sign > 0 else -det


def adjugate(mat: PolyRows) -> PolyRows:
    """Classical adjugate from Bareiss minors, so ``mat @ adj = det * Id`` with no division."""
    m = len(mat)
    nvars = mat[0][0].nvars
    if m == 1:
        return [[Poly.constant(nvars, 1)]]
    adj = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            minor = [[mat[r][c] for c in range(m) if c != i] for r in range(m) if r != j]
            d = bareiss_det(minor)
            adj[i][j] = d if (i + j) % 2 == 0 else -d
    return adj


class PolyMatrix:
    """A matrix of homogeneous polynomials sharing one degree."""

    def __init__(self, rows: PolyRows, degree: int | None = None):
        self.rows = rows
        self.shape = (len(rows), len(rows[0]) if rows else 0)
        self.nvars = rows[0][0].nvars
        if degree is None:
            degree = max((p.degree for row in rows for p in row), default=-1)
        self.degree = degree

    def is_zero(self) -> bool:
        return all(p.is_zero() for row in self.rows for p in row)

    def is_homogeneous(self) -> bool:
        return all(p.is_homogeneous(self.degree) for row in self.rows for p in row)

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        return PolyMatrix(matmul(self.rows, other.rows))

    def evaluate(self, point) -> list[list]:
        return [[p.evaluate(point) for p in row] for row in self.rows]

    def evaluate_float(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)[None, :]
        return np.array([[p.evaluate_float(xi)[0] for p in row] for row in self.rows])

    def exponents(self) -> list[tuple[int, ...]]:
        return sorted({e for row in self.rows for p in row for e in p.terms}, reverse=True)

    def coefficient(self, exps: tuple[int, ...]) -> np.ndarray:
        """Float coefficient matrix of the monomial ``xi**exps``."""
        return np.array([[float(p.terms.get(exps, 0)) for p in row] for row in self.rows])

    def to_strings(self) -> list[list[str]]:
        return [[str(p) for p in row] for row in self.rows]


def from_operator_symbol(op) -> PolyMatrix:
    """The symbol of ``op`` as an exact polynomial matrix."""
    rows = [[Poly(op.n) for _ in range(op.dim_v)] for _ in range(op.dim_w)]
    for alpha, mat in op.exact_coeffs().items():
        for i in range(op.dim_w):
            for j in range(op.dim_v):
                if mat[i][j]:
                    rows[i][j] = rows[i][j] + Poly.monomial(alpha, mat[i][j])
    return PolyMatrix(rows, op.k)


def identity(m: int, nvars: int) -> PolyRows:
    return [[Poly.constant(nvars, int(i == j)) for j in range(m)] for i in range(m)]


def scale(a: PolyRows, p: Poly) -> PolyRows:
    return [[x * p for x in row] for row in a]


def subtract(a: PolyRows, b: PolyRows) -> PolyRows:
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def rational_grid(nvars: int, count: int, start: int = 1) -> Iterable[tuple[Fraction, ...]]:
    """``count`` distinct rationals per variable, combined as a full tensor grid."""
    values = [Fraction(start + i, 7 + 2 * i) * (1 if i % 2 == 0 else -1) for i in range(count)]
    def rec(prefix):
        if len(prefix) == nvars:
            yield tuple(prefix)
            return
        for v in values:
            yield from rec(prefix + [v])
    return rec([])
