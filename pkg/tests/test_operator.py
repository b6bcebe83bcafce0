import json
from fractions import Fraction
from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opcancel import Operator, OperatorFormatError, builtin, parse_operator, serialize_operator, symbol
from opcancel.operator import monomials, symbol_exact
from opcancel.registry import GALLERY, UnknownOperatorError

A1_FILE = {
    "name": "A1",
    "n": 2,
    "k": 2,
    "dimV": 2,
    "dimW": 2,
    "coefficients": [
        {"alpha": [2, 0], "matrix": [[1, 0], [0, 1]]},
        {"alpha": [1, 1], "matrix": [[0, 2], [-2, 0]]},
        {"alpha": [0, 2], "matrix": [[-1, 0], [0, -1]]},
    ],
}

GRAD_FILE = {
    "name": "grad",
    "n": 2,
    "k": 1,
    "dimV": 1,
    "dimW": 2,
    "coefficients": [
        {"alpha": [1, 0], "matrix": [[1], [0]]},
        {"alpha": [0, 1], "matrix": [[0], [1]]},
    ],
}


def a1_by_hand(x1, x2):
    return np.array([[x1**2 - x2**2, 2 * x1 * x2], [-2 * x1 * x2, x1**2 - x2**2]])


# --------------------------------------------------------------------------- parsing


def test_parse_a1_file_symbol():
    op = parse_operator(json.dumps(A1_FILE))
    for xi in [(1.0, 0.0), (0.3, -1.7), (2.0, 5.0)]:
        np.testing.assert_allclose(symbol(op, xi), a1_by_hand(*xi), rtol=0, atol=1e-13)


def test_alpha_length_error_names_alpha():
    bad = json.loads(json.dumps(A1_FILE))
    bad["coefficients"][0]["alpha"] = [2, 0, 0]
    with pytest.raises(OperatorFormatError, match=r"alpha \[2, 0, 0\]"):
        parse_operator(json.dumps(bad))


def test_gradient_file_symbol_is_v_times_xi():
    op = parse_operator(json.dumps(GRAD_FILE))
    xi = np.array([0.7, -2.5])
    np.testing.assert_array_equal(symbol(op, xi) @ np.array([3.0]), 3.0 * xi)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["coefficients"][0].update(alpha=[1, 0]), r"\|alpha\|=1 != k=2"),
        (lambda d: d["coefficients"][1].update(matrix=[[0, 2]]), "shape mismatch"),
        (lambda d: d.update(extra=1), "unknown keys"),
        (lambda d: d.pop("dimV"), "missing keys"),
        (lambda d: d["coefficients"][0].update(matrix=[["1/0", 0], [0, 1]]), "bad rational"),
        (lambda d: d["coefficients"].append({"alpha": [2, 0], "matrix": [[1, 0], [0, 1]]}), "duplicated"),
        (lambda d: d.update(coefficients=[{"alpha": [2, 0], "matrix": [[0, 0], [0, 0]]}]), "vanish"),
    ],
)
def test_format_errors(mutate, message):
    data = json.loads(json.dumps(A1_FILE))
    mutate(data)
    with pytest.raises(OperatorFormatError, match=message):
        parse_operator(json.dumps(data))


def test_invalid_json_rejected():
    with pytest.raises(OperatorFormatError, match="not valid JSON"):
        parse_operator("{")


def test_rational_strings_parse_exactly():
    data = json.loads(json.dumps(GRAD_FILE))
    data["coefficients"][0]["matrix"] = [["1/3"], [0]]
    op = parse_operator(json.dumps(data))
    assert op.coeffs[(1, 0)][0][0] == Fraction(1, 3)
    assert op.is_rational


# --------------------------------------------------------------------------- symbol


def test_a1_symbol_at_e1_is_identity():
    np.testing.assert_array_equal(symbol(builtin("A1"), [1.0, 0.0]), np.eye(2))


@pytest.mark.parametrize("name", [row[0] for row in GALLERY])
def test_symbol_at_zero_vanishes(name):
    op = builtin(name)
    assert not np.any(symbol(op, np.zeros(op.n)))


def test_laplacian_symbol_at_3_4():
    assert symbol(builtin("laplacian_power(2,1)"), [3.0, 4.0]).tolist() == [[25.0]]


def test_symbol_rejects_wrong_length():
    with pytest.raises(ValueError):
        symbol(builtin("A1"), [1.0, 2.0, 3.0])


# --------------------------------------------------------------------------- registry


def test_builtin_a1_matches_file():
    assert serialize_operator(builtin("A1")) == serialize_operator(parse_operator(json.dumps(A1_FILE)))


def test_laplacian_div_curl_dims():
    op = builtin("laplacian_div_curl_3d")
    assert (op.n, op.k, op.dim_v, op.dim_w) == (3, 3, 3, 4)


def test_d_dx1_is_scalar_first_order():
    op = builtin("d_dx1(2)")
    assert (op.n, op.k, op.dim_v, op.dim_w) == (2, 1, 1, 1)
    assert op.coeffs == {(1, 0): ((Fraction(1),),)}


def test_unknown_builtin_lists_registry():
    with pytest.raises(UnknownOperatorError, match="registry: grad"):
        builtin("laplace")


@pytest.mark.parametrize("a, b", [("grad(2,1)", "grad_2_1"), ("grad(3)", "grad_3_1"), ("d_k_1d(3)", "d_k_1d_3")])
def test_builtin_name_forms(a, b):
    assert serialize_operator(builtin(a)) == serialize_operator(builtin(b))


def test_builtin_argument_count_checked():
    with pytest.raises(UnknownOperatorError, match="expects"):
        builtin("div_curl(2,2)")


def _curl_rows(x):
    n = len(x)
    rows = [list(x)]
    for i in range(n):
        for j in range(i + 1, n):
            r = [0.0] * n
            r[j], r[i] = x[i], -x[j]
            rows.append(r)
    return np.array(rows)


def _hand_symbols(name, x):
    """Symbols written out from the operator definitions, independent of the registry code."""
    x1, x2 = x[0], x[1] if len(x) > 1 else None
    r2 = float(np.dot(x, x))
    if name == "A1":
        return a1_by_hand(x1, x2)
    if name == "A2":
        m = np.zeros((5, 3))
        m[:2, :2] = a1_by_hand(x1, x2)
        m[2:, 2] = [x1**2, sqrt(2.0) * x1 * x2, x2**2]
        return m
    if name.startswith("laplacian_power"):
        d = int(name[-2])
        return np.array([[r2**d]])
    if name == "laplacian_div_curl_3d":
        return r2 * _curl_rows(x)
    if name.startswith("div_curl"):
        return _curl_rows(x)
    if name.startswith("grad"):
        n, m = (int(c) for c in name[5:-1].split(","))
        return np.kron(np.eye(m), np.asarray(x).reshape(n, 1))
    if name == "sym_grad(2)":
        return np.array([[x1, 0], [x2 / 2, x1 / 2], [0, x2]])
    if name == "sym_grad(3)":
        x3 = x[2]
        return np.array(
            [[x1, 0, 0], [x2 / 2, x1 / 2, 0], [x3 / 2, 0, x1 / 2], [0, x2, 0], [0, x3 / 2, x2 / 2], [0, 0, x3]]
        )
    if name == "hessian(2)":
        return np.array([[x1**2], [x1 * x2], [x2**2]])
    if name.startswith("d_k_1d"):
        return np.array([[x1 ** int(name[-2])]])
    if name == "d_dx1(2)":
        return np.array([[x1]])
    raise KeyError(name)


FIXED_XI = {
    1: [[1.0], [-1.0], [2.0], [0.5], [-3.0]],
    2: [[1, 0], [0, 1], [1, 1], [2, -3], [-0.5, 0.25]],
    3: [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 2, 3], [-1, 0.5, 2]],
}


@pytest.mark.parametrize("name", [row[0] for row in GALLERY])
def test_registry_regression(name):
    op = builtin(name)
    for xi in FIXED_XI[op.n]:
        xi = np.array(xi, dtype=float)
        np.testing.assert_allclose(symbol(op, xi), _hand_symbols(name, xi), rtol=0, atol=1e-12)


# --------------------------------------------------------------------------- properties


@st.composite
def rational_operators(draw):
    n = draw(st.integers(1, 3))
    k = draw(st.integers(1, 3))
    dv = draw(st.integers(1, 3))
    dw = draw(st.integers(1, 3))
    small = st.fractions(min_value=-5, max_value=5, max_denominator=7)
    coeffs = {}
    for alpha in monomials(n, k):
        if draw(st.booleans()):
            coeffs[alpha] = [[draw(small) for _ in range(dv)] for _ in range(dw)]
    alpha0 = monomials(n, k)[0]
    coeffs[alpha0] = [[Fraction(1)] + [Fraction(0)] * (dv - 1)] + [[Fraction(0)] * dv for _ in range(dw - 1)]
    return Operator("random", n, k, dv, dw, coeffs)


fractions = st.fractions(min_value=-3, max_value=3, max_denominator=5)


@settings(max_examples=60, deadline=None)
@given(rational_operators(), st.lists(fractions, min_size=3, max_size=3), st.fractions(min_value=-4, max_value=4, max_denominator=5))
def test_symbol_homogeneity_exact(op, xi, t):
    xi = xi[: op.n]
    lhs = symbol_exact(op, [t * x for x in xi])
    rhs = [[t**op.k * v for v in row] for row in symbol_exact(op, xi)]
    assert lhs == rhs


@settings(max_examples=60, deadline=None)
@given(rational_operators(), st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.1, 10))
def test_symbol_homogeneity_float(op, xi, t):
    xi = np.array(xi[: op.n])
    lhs = symbol(op, t * xi)
    rhs = t**op.k * symbol(op, xi)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(rhs).max()))


@settings(max_examples=60, deadline=None)
@given(rational_operators(), st.lists(fractions, min_size=3, max_size=3))
def test_symbol_parity_exact(op, xi):
    xi = xi[: op.n]
    lhs = symbol_exact(op, [-x for x in xi])
    rhs = [[(-1) ** op.k * v for v in row] for row in symbol_exact(op, xi)]
    assert lhs == rhs


@settings(max_examples=60, deadline=None)
@given(rational_operators())
def test_serialization_round_trip(op):
    again = parse_operator(serialize_operator(op))
    assert again.coeffs == op.coeffs
    assert (again.name, again.n, again.k, again.dim_v, again.dim_w) == (op.name, op.n, op.k, op.dim_v, op.dim_w)
    assert serialize_operator(again) == serialize_operator(op)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=4, max_size=4))
def test_float_coefficients_round_trip_bit_exact(vals):
    coeffs = {(1, 0): [[vals[0], vals[1]]], (0, 1): [[vals[2], vals[3] or 1.0]]}
    op = Operator("floats", 2, 1, 2, 1, coeffs)
    again = parse_operator(serialize_operator(op))
    assert again.coeffs == op.coeffs
