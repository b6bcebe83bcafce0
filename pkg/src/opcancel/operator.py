"""Constant-coefficient homogeneous operators and their symbols.

An operator of order ``k`` on ``R^n`` mapping ``V = R^dim_v`` valued fields to
``W = R^dim_w`` valued fields is stored as one ``dim_w x dim_v`` coefficient
matrix per multi-index ``alpha`` with ``|alpha| = k``.  The symbol at ``xi`` is
``sum_alpha A_alpha * xi**alpha`` with plain monomials (no multinomial
factors), and Fourier constants such as ``i**k`` are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations_with_replacement
from math import isfinite
from typing import Mapping, Sequence, Union

import numpy as np

Scalar = Union[Fraction, float]
MultiIndex = tuple[int, ...]

_FILE_KEYS = {"name", "n", "k", "dimV", "dimW", "coefficients"}


class OperatorFormatError(ValueError):
    """Raised for malformed operator files or inconsistent operator data."""


def monomials(n: int, degree: int) -> list[MultiIndex]:
    """All exponent tuples of length ``n`` summing to ``degree``.

    Ordered lexicographically descending, e.g. ``(2,0), (1,1), (0,2)``.
    """
    if degree == 0:
        return [(0,) * n]
    out = []
    for combo in combinations_with_replacement(range(n), degree):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    return out


def monomial_values(xis: np.ndarray, alphas: Sequence[MultiIndex]) -> np.ndarray:
    """Evaluate ``xi**alpha`` for a stack of points; returns shape ``(M, len(alphas))``."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    out = np.ones((xis.shape[0], len(alphas)))
    for j, alpha in enumerate(alphas):
        for i, e in enumerate(alpha):
            if e:
                out[:, j] *= xis[:, i] ** e
    return out


def _parse_scalar(value, where: str) -> Scalar:
    if isinstance(value, bool):
        raise OperatorFormatError(f"{where}: booleans are not coefficients")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not isfinite(value):
            raise OperatorFormatError(f"{where}: non-finite coefficient {value!r}")
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise OperatorFormatError(f"{where}: bad rational {value!r}") from exc
    raise OperatorFormatError(f"{where}: unsupported coefficient {value!r}")


def _as_scalar(value) -> Scalar:
    if isinstance(value, (Fraction, float)):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return _parse_scalar(value, "coefficient")


@dataclass(frozen=True, eq=False)
class Operator:
    """A homogeneous order-``k`` operator ``A(D^k u)`` on ``R^n``.

    Coefficient entries are either :class:`fractions.Fraction` (exact) or
    ``float``.  Floats convert to rationals exactly via ``Fraction(x)``, so
    exact algebra is available for every operator.
    """

    name: str
    n: int
    k: int
    dim_v: int
    dim_w: int
    coeffs: Mapping[MultiIndex, tuple[tuple[Scalar, ...], ...]]
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.dim_v < 1 or self.dim_w < 1:
            raise OperatorFormatError(
                f"{self.name}: n, k, dimV, dimW must be positive "
                f"(got n={self.n}, k={self.k}, dimV={self.dim_v}, dimW={self.dim_w})"
            )
        clean = {}
        for alpha, mat in self.coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n:
                raise OperatorFormatError(f"alpha {list(alpha)}: length {len(alpha)} != n={self.n}")
            if any(a < 0 for a in alpha):
                raise OperatorFormatError(f"alpha {list(alpha)}: negative entry")
            if sum(alpha) != self.k:
                raise OperatorFormatError(f"alpha {list(alpha)}: |alpha|={sum(alpha)} != k={self.k}")
            if len(mat) != self.dim_w or any(len(row) != self.dim_v for row in mat):
                raise OperatorFormatError(
                    f"alpha {list(alpha)}: matrix shape mismatch, expected {self.dim_w}x{self.dim_v}"
                )
            if alpha in clean:
                raise OperatorFormatError(f"alpha {list(alpha)}: duplicated")
            clean[alpha] = tuple(tuple(_as_scalar(x) for x in row) for row in mat)
        if not any(x != 0 for mat in clean.values() for row in mat for x in row):
            raise OperatorFormatError(f"{self.name}: all coefficient matrices vanish")
        object.__setattr__(self, "coeffs", dict(sorted(clean.items(), reverse=True)))

    @property
    def alphas(self) -> list[MultiIndex]:
        return list(self.coeffs)

    @property
    def is_rational(self) -> bool:
        return all(isinstance(x, Fraction) for mat in self.coeffs.values() for row in mat for x in row)

    @cached_property
    def coeff_array(self) -> np.ndarray:
        """Float coefficient stack of shape ``(len(alphas), dim_w, dim_v)``."""
        return np.array([[[float(x) for x in row] for row in mat] for mat in self.coeffs.values()])

    def exact_coeffs(self) -> dict[MultiIndex, list[list[Fraction]]]:
        return {a: [[Fraction(x) for x in row] for row in mat] for a, mat in self.coeffs.items()}

    def lipschitz_bound(self) -> float:
        """Lipschitz constant of ``xi -> A[xi]`` on the unit sphere: ``k * sum ||A_alpha||``."""
        return self.k * float(sum(np.linalg.norm(m, 2) for m in self.coeff_array))

    def __repr__(self):
        return f"Operator({self.name!r}, n={self.n}, k={self.k}, dimV={self.dim_v}, dimW={self.dim_w})"


def symbol(op: Operator, xi) -> np.ndarray:
    """Symbol matrix ``A[xi]`` (``dim_w x dim_v``) in float arithmetic."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (op.n,):
        raise ValueError(f"xi must have length {op.n}")
    return symbols(op, xi[None, :])[0]


def symbols(op: Operator, xis) -> np.ndarray:
    """Batch symbol evaluation; ``xis`` has shape ``(M, n)``, result ``(M, dim_w, dim_v)``."""
    mono = monomial_values(xis, op.alphas)
    return np.einsum("ma,awv->mwv", mono, op.coeff_array)


def symbol_exact(op: Operator, xi: Sequence) -> list[list[Fraction]]:
    """Symbol at a rational point, computed in exact arithmetic."""
    xi = [Fraction(x) for x in xi]
    if len(xi) != op.n:
        raise ValueError(f"xi must have length {op.n}")
    out = [[Fraction(0)] * op.dim_v for _ in range(op.dim_w)]
    for alpha, mat in op.exact_coeffs().items():
        m = Fraction(1)
        for x, e in zip(xi, alpha):
            m *= x**e
        if m == 0:
            continue
        for i in range(op.dim_w):
            for j in range(op.dim_v):
                out[i][j] += mat[i][j] * m
    return out


def _scalar_to_json(x: Scalar):
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return x


def to_dict(op: Operator) -> dict:
    return {
        "name": op.name,
        "n": op.n,
        "k": op.k,
        "dimV": op.dim_v,
        "dimW": op.dim_w,
        "coefficients": [
            {"alpha": list(alpha), "matrix": [[_scalar_to_json(x) for x in row] for row in mat]}
            for alpha, mat in op.coeffs.items()
        ],
    }


def serialize_operator(op: Operator) -> str:
    return json.dumps(to_dict(op), indent=2)


def parse_operator(text: str) -> Operator:
    """Parse the JSON operator file format.

    Raises :class:`OperatorFormatError` naming the offending key or ``alpha``.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OperatorFormatError(f"not valid JSON: {exc}") from exc
    return from_dict(data)


def from_dict(data) -> Operator:
    if not isinstance(data, dict):
        raise OperatorFormatError("operator file must be a JSON object")
    unknown = set(data) - _FILE_KEYS
    if unknown:
        raise OperatorFormatError(f"unknown keys: {sorted(unknown)}")
    missing = _FILE_KEYS - set(data)
    if missing:
        raise OperatorFormatError(f"missing keys: {sorted(missing)}")
    if not isinstance(data["name"], str):
        raise OperatorFormatError("name: must be a string")
    for key in ("n", "k", "dimV", "dimW"):
        if not isinstance(data[key], int) or isinstance(data[key], bool):
            raise OperatorFormatError(f"{key}: must be an integer")
    n, k = data["n"], data["k"]
    if not isinstance(data["coefficients"], list):
        raise OperatorFormatError("coefficients: must be an array")
    coeffs = {}
    for entry in data["coefficients"]:
        if not isinstance(entry, dict) or set(entry) != {"alpha", "matrix"}:
            raise OperatorFormatError(f"coefficients entry {entry!r}: expected keys alpha, matrix")
        alpha = entry["alpha"]
        if not isinstance(alpha, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in alpha):
            raise OperatorFormatError(f"alpha {alpha!r}: must be an integer array")
        if len(alpha) != n:
            raise OperatorFormatError(f"alpha {alpha}: length {len(alpha)} != n={n}")
        if sum(alpha) != k:
            raise OperatorFormatError(f"alpha {alpha}: |alpha|={sum(alpha)} != k={k}")
        mat = entry["matrix"]
        if not isinstance(mat, list) or not all(isinstance(r, list) for r in mat):
            raise OperatorFormatError(f"alpha {alpha}: matrix must be a 2-D array")
        where = f"alpha {alpha}"
        coeffs.setdefault(tuple(alpha), None)
        if coeffs[tuple(alpha)] is not None:
            raise OperatorFormatError(f"{where}: duplicated")
        coeffs[tuple(alpha)] = [[_parse_scalar(x, where) for x in row] for row in mat]
    return Operator(data["name"], n, k, data["dimV"], data["dimW"], coeffs)


def load_operator(path) -> Operator:
    with open(path, encoding="utf-8") as fh:
        return parse_operator(fh.read())
