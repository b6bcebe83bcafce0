"""Built-in example operators.

Names accept either call syntax (``grad(2,1)``) or the underscore form used on
the command line (``grad_2_1``).

Encoding conventions:

* ``grad(n, m)``: ``W = R^{m x n}`` flattened row-major, entry ``(i, j)`` is
  ``v_i xi_j``.
* ``sym_grad(n)``: independent entries ``i <= j`` of the symmetric part,
  ``(v_i xi_j + v_j xi_i) / 2``.
* ``div_curl(n)``: divergence followed by the ``n(n-1)/2`` independent entries
  ``xi_i v_j - xi_j v_i`` (``i < j``) of the antisymmetric curl matrix.
* ``laplacian_div_curl_3d``: ``|xi|^2`` times ``div_curl(3)``, so ``dimW = 1 + 3``.
* ``A2``: the ``sqrt(2)`` coefficient is stored as the nearest double.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from itertools import combinations
from math import factorial

from .operator import MultiIndex, Operator, monomials


def _unit(n: int, i: int, times: int = 1) -> MultiIndex:
    alpha = [0] * n
    alpha[i] += times
    return tuple(alpha)


def _zeros(rows: int, cols: int):
    return [[Fraction(0)] * cols for _ in range(rows)]


def _new_coeffs(n: int, k: int, rows: int, cols: int) -> dict:
    return {alpha: _zeros(rows, cols) for alpha in monomials(n, k)}


def _prune(coeffs: dict) -> dict:
    return {a: m for a, m in coeffs.items() if any(x != 0 for row in m for x in row)}


def grad(n: int, m: int = 1) -> Operator:
    coeffs = _new_coeffs(n, 1, m * n, m)
    for i in range(m):
        for j in range(n):
            coeffs[_unit(n, j)][i * n + j][i] = Fraction(1)
    return Operator(f"grad({n},{m})", n, 1, m, m * n, _prune(coeffs))


def sym_grad(n: int) -> Operator:
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    coeffs = _new_coeffs(n, 1, len(pairs), n)
    for row, (i, j) in enumerate(pairs):
        if i == j:
            coeffs[_unit(n, i)][row][i] += 1
        else:
            coeffs[_unit(n, j)][row][i] += Fraction(1, 2)
            coeffs[_unit(n, i)][row][j] += Fraction(1, 2)
    return Operator(f"sym_grad({n})", n, 1, n, len(pairs), _prune(coeffs))


def laplacian_power(n: int, d: int) -> Operator:
    coeffs = {}
    for m in monomials(n, d):
        mult = factorial(d)
        for e in m:
            mult //= factorial(e)
        coeffs[tuple(2 * e for e in m)] = [[Fraction(mult)]]
    return Operator(f"laplacian_power({n},{d})", n, 2 * d, 1, 1, coeffs)


def _div_curl_entries(n: int):
    """Yield ``(row, xi_index, v_index, sign)`` for the first-order div-curl symbol."""
    for i in range(n):
        yield 0, i, i, 1
    for row, (i, j) in enumerate(combinations(range(n), 2), start=1):
        yield row, i, j, 1
        yield row, j, i, -1


def div_curl(n: int) -> Operator:
    dim_w = 1 + n * (n - 1) // 2
    coeffs = _new_coeffs(n, 1, dim_w, n)
    for row, xi_i, v_j, sign in _div_curl_entries(n):
        coeffs[_unit(n, xi_i)][row][v_j] += sign
    return Operator(f"div_curl({n})", n, 1, n, dim_w, _prune(coeffs))


def laplacian_div_curl_3d() -> Operator:
    n = 3
    coeffs = _new_coeffs(n, 3, 4, 3)
    for row, xi_i, v_j, sign in _div_curl_entries(n):
        for l in range(n):
            alpha = list(_unit(n, xi_i))
            alpha[l] += 2
            coeffs[tuple(alpha)][row][v_j] += sign
    return Operator("laplacian_div_curl_3d", n, 3, 3, 4, _prune(coeffs))


def a1() -> Operator:
    coeffs = {
        (2, 0): [[1, 0], [0, 1]],
        (1, 1): [[0, 2], [-2, 0]],
        (0, 2): [[-1, 0], [0, -1]],
    }
    return Operator("A1", 2, 2, 2, 2, coeffs)


def a2() -> Operator:
    s = math.sqrt(2.0)
    coeffs = {
        (2, 0): [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0], [0, 0, 0]],
        (1, 1): [[0, 2, 0], [-2, 0, 0], [0, 0, 0], [0, 0, s], [0, 0, 0]],
        (0, 2): [[-1, 0, 0], [0, -1, 0], [0, 0, 0], [0, 0, 0], [0, 0, 1]],
    }
    return Operator("A2", 2, 2, 3, 5, coeffs, notes="sqrt(2) stored as the nearest double")


def hessian(n: int) -> Operator:
    alphas = monomials(n, 2)
    coeffs = {a: [[Fraction(int(a == b))] for b in alphas] for a in alphas}
    return Operator(f"hessian({n})", n, 2, 1, len(alphas), coeffs)


def d_dx1(n: int) -> Operator:
    return Operator(f"d_dx1({n})", n, 1, 1, 1, {_unit(n, 0): [[1]]})


def d_k_1d(k: int) -> Operator:
    return Operator(f"d_k_1d({k})", 1, k, 1, 1, {(k,): [[1]]})


REGISTRY = {
    "grad": (grad, 2),
    "sym_grad": (sym_grad, 1),
    "laplacian_power": (laplacian_power, 2),
    "div_curl": (div_curl, 1),
    "laplacian_div_curl_3d": (laplacian_div_curl_3d, 0),
    "A1": (a1, 0),
    "A2": (a2, 0),
    "hessian": (hessian, 1),
    "d_dx1": (d_dx1, 1),
    "d_k_1d": (d_k_1d, 1),
}


class UnknownOperatorError(KeyError):
    def __str__(self):
        return self.args[0]


SIGNATURES = [
    "grad(n,m)", "sym_grad(n)", "laplacian_power(n,d)", "div_curl(n)", "laplacian_div_curl_3d",
    "A1", "A2", "hessian(n)", "d_dx1(n)", "d_k_1d(k)",
]


def _usage() -> str:
    return ", ".join(SIGNATURES)


def builtin(name: str) -> Operator:
    """Look up a registry operator by name, e.g. ``"A1"``, ``"grad(2,1)"`` or ``"grad_2_1"``."""
    text = name.strip()
    for key in sorted(REGISTRY, key=len, reverse=True):
        if text == key:
            rest = ""
        elif text.startswith(key + "(") and text.endswith(")"):
            rest = text[len(key) + 1 : -1].replace(" ", "")
            rest = rest.replace(",", "_")
        elif text.startswith(key + "_") and re.fullmatch(r"(_\d+)+", text[len(key):]):
            rest = text[len(key) + 1 :]
        else:
            continue
        factory, nargs = REGISTRY[key]
        args = [int(a) for a in rest.split("_")] if rest else []
        if key == "grad" and len(args) == 1:
            args.append(1)
        if len(args) != nargs:
            raise UnknownOperatorError(f"{key} expects {nargs} integer argument(s), got {args}")
        if any(a < 1 for a in args):
            raise UnknownOperatorError(f"{key}: arguments must be positive, got {args}")
        return factory(*args)
    raise UnknownOperatorError(f"unknown builtin {name!r}; registry: {_usage()}")


# Registry rows with the verdicts the examples establish.  ``wc`` is None when k < n.
GALLERY = [
    ("A1", dict(elliptic=True, canceling=False, wc=True, L_nonzero=False)),
    ("A2", dict(elliptic=True, canceling=False, wc=True, L_nonzero=True)),
    ("laplacian_power(2,1)", dict(elliptic=True, canceling=False, wc=False, L_nonzero=True)),
    ("laplacian_power(2,2)", dict(elliptic=True, canceling=False, wc=False, L_nonzero=True)),
    ("laplacian_div_curl_3d", dict(elliptic=True, canceling=False, wc=True, L_nonzero=False)),
    ("div_curl(2)", dict(elliptic=True, canceling=False, wc=None)),
    ("div_curl(3)", dict(elliptic=True, canceling=False, wc=None)),
    ("grad(2,1)", dict(elliptic=True, canceling=True, wc=None)),
    ("grad(3,1)", dict(elliptic=True, canceling=True, wc=None)),
    ("grad(2,2)", dict(elliptic=True, canceling=True, wc=None)),
    ("sym_grad(2)", dict(elliptic=True, canceling=True, wc=None)),
    ("sym_grad(3)", dict(elliptic=True, canceling=True, wc=None)),
    ("hessian(2)", dict(elliptic=True, canceling=True, wc=True, L_nonzero=True)),
    ("d_k_1d(1)", dict(elliptic=True, canceling=False, wc=True, L_nonzero=False)),
    ("d_k_1d(3)", dict(elliptic=True, canceling=False, wc=True, L_nonzero=False)),
    ("d_dx1(2)", dict(elliptic=False)),
]
