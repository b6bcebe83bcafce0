from math import pi

import numpy as np
import pytest
from scipy.stats import linregress

from opcancel import builtin
from opcancel.grid import Grid
from opcancel.kernels import (
    NotInJError,
    annulus_mask,
    check_derivative_order,
    decompose_log,
    default_annulus,
    fundamental_witness,
    homogeneity_check,
    log_constant,
    radial_trend,
    synthesize_kernel,
)
from opcancel.symbol_analysis import NonEllipticError, NotApplicableError, RefusedError, symbols


def annulus_points(bundle_or_field, lo=None, hi=None):
    gf = getattr(bundle_or_field, "field", bundle_or_field)
    grid = gf.grid
    d_lo, d_hi = default_annulus(grid)
    mask = annulus_mask(grid, lo or d_lo, hi or d_hi, gf.singular)
    return grid.coords()[mask], gf.values[mask], mask


# --------------------------------------------------------------------------- synthesis


def test_expected_homogeneity_recorded():
    for name, l in [("grad(2,1)", 0), ("A1", 0), ("laplacian_power(2,1)", 1), ("laplacian_power(2,2)", 3)]:
        op = builtin(name)
        b = synthesize_kernel(op, l, N=32)
        assert b.expected_homogeneity == op.k - op.n - l
        assert b.field.singular[b.field.grid.origin_index]


def test_grad_kernel_is_newtonian_gradient():
    # K with div K = delta_0 in R^2 is x / (2 pi |x|^2)
    b = synthesize_kernel(builtin("grad(2,1)"), 0, N=512)
    x, vals, _ = annulus_points(b)
    model = x / (x**2).sum(axis=1, keepdims=True)
    got = vals[:, 0, :]
    c = float((got * model).sum() / (model * model).sum())
    assert c == pytest.approx(1 / (2 * pi), rel=0.05)
    rel = np.linalg.norm(got - c * model, axis=1).max() / np.linalg.norm(c * model, axis=1).max()
    assert rel < 0.05


def test_laplacian_kernel_is_logarithmic():
    # Newtonian potential in R^2: (1 / 2 pi) log|x| + const
    b = synthesize_kernel(builtin("laplacian_power(2,1)"), 0, N=256)
    x, vals, _ = annulus_points(b)
    fit = linregress(np.log(np.linalg.norm(x, axis=1)), vals[:, 0, 0])
    assert fit.slope == pytest.approx(1 / (2 * pi), rel=0.02)
    assert fit.rvalue**2 > 0.999


def test_log_constant_matches_newtonian_normalization():
    assert log_constant(2) == pytest.approx(1 / (4 * pi**2), rel=0.01)


def test_d_k_1d_kernel_is_periodic_sawtooth():
    # antiderivative kernel on the circle of length 2L: sgn(x)/2 - x/(2L)
    b = synthesize_kernel(builtin("d_k_1d(1)"), 0, N=256)
    x, vals, _ = annulus_points(b)
    L = b.field.grid.L
    oracle = np.sign(x[:, 0]) / 2 - x[:, 0] / (2 * L)
    assert np.max(np.abs(vals[:, 0, 0] - oracle) / np.abs(oracle)) < 0.05


def test_refuses_non_elliptic():
    with pytest.raises(NonEllipticError):
        synthesize_kernel(builtin("d_dx1(2)"), 0, N=32)


@pytest.mark.parametrize("name, l, word", [("laplacian_power(2,2)", 1, "too small"), ("grad(2,1)", 1, "too large")])
def test_derivative_order_refused_with_homogeneity(name, l, word):
    op = builtin(name)
    with pytest.raises(RefusedError, match=word) as exc:
        check_derivative_order(op, l)
    assert f"{op.k - op.n - l}-homogeneous" in str(exc.value)


# --------------------------------------------------------------------------- homogeneity and log decomposition


@pytest.mark.parametrize("name, l", [("grad(2,1)", 0), ("A1", 0), ("laplacian_power(2,1)", 1)])
def test_homogeneity_examples(name, l):
    assert homogeneity_check(synthesize_kernel(builtin(name), l, N=512)) < 0.05


def test_homogeneity_refuses_log_kernel():
    with pytest.raises(RefusedError, match="decompose_log"):
        homogeneity_check(synthesize_kernel(builtin("laplacian_power(2,1)"), 0, N=64))


def test_annulus_out_of_range():
    b = synthesize_kernel(builtin("grad(2,1)"), 0, N=64)
    h = b.field.grid.h
    with pytest.raises(ValueError, match="annulus"):
        homogeneity_check(b, annulus=(h, 0.2))
    with pytest.raises(ValueError, match="leaves the box"):
        homogeneity_check(b, s=8.0, annulus=(4 * h, b.field.grid.L / 4))


@pytest.mark.parametrize("name, l", [("laplacian_power(2,1)", 0), ("A1", 0), ("laplacian_power(2,2)", 2)])
def test_decompose_log_examples(name, l):
    dec = decompose_log(synthesize_kernel(builtin(name), l, N=512))
    assert dec.residual_deviation < 0.05


def test_decompose_log_a1_subtracts_nothing():
    dec = decompose_log(synthesize_kernel(builtin("A1"), 0, N=128))
    assert np.abs(dec.L).max() <= 1e-12


def test_decompose_log_refuses_k_below_n():
    with pytest.raises(NotApplicableError):
        decompose_log(synthesize_kernel(builtin("grad(2,1)"), 0, N=32))


def test_without_log_subtraction_laplacian_is_not_homogeneous():
    # control: the raw log kernel fails the 0-homogeneity test the residual passes
    b = synthesize_kernel(builtin("laplacian_power(2,1)"), 0, N=256)
    raw = decompose_log(b, L_matrix=np.zeros((1, 1)))
    assert raw.residual_deviation > 0.2


# --------------------------------------------------------------------------- radial trend


def test_laplacian_trend_grows_in_log():
    t = radial_trend(synthesize_kernel(builtin("laplacian_power(2,1)"), 0, N=512))
    assert t["slope"] > 0 and t["r2"] >= 0.98


def test_a1_trend_is_flat():
    t = radial_trend(synthesize_kernel(builtin("A1"), 0, N=512))
    assert abs(t["slope"]) <= 0.05 * t["amplitude"]


# --------------------------------------------------------------------------- witnesses


def test_laplacian_div_curl_witness_is_radial_unit_field():
    op = builtin("laplacian_div_curl_3d")
    res = fundamental_witness(op, [1, 0, 0, 0], N=128)
    assert res.residual <= 1e-10
    x, vals, _ = annulus_points(res.field)
    model = x / np.linalg.norm(x, axis=1, keepdims=True)
    c = float((vals * model).sum() / (model * model).sum())
    assert np.linalg.norm(vals - c * model, axis=1).max() / abs(c) < 0.05


def test_a1_witness_bounded():
    res = fundamental_witness(builtin("A1"), [1, 0], N=256)
    assert res.residual <= 1e-10
    _, vals, _ = annulus_points(res.field)
    mag = np.linalg.norm(vals, axis=1)
    assert np.isfinite(mag).all() and mag.max() < 1.0


def test_grad_witness_refused_with_offending_direction():
    op = builtin("grad(2,1)")
    with pytest.raises(NotInJError, match="not in J") as exc:
        fundamental_witness(op, [1, 0], N=32)
    xi = np.array(exc.value.xi)
    u = symbols(op, xi[None, :])[0]
    w = np.array([1.0, 0.0])
    # w is not in the span of A[xi]
    proj = u @ np.linalg.lstsq(u, w, rcond=None)[0]
    assert np.linalg.norm(w - proj) > 0.1


def test_witness_rejects_wrong_length():
    with pytest.raises(ValueError, match="components"):
        fundamental_witness(builtin("A1"), [1, 0, 0], N=32)


# --------------------------------------------------------------------------- resolution stability


def _resolution_change(name, l, lo_cells=4, N=256):
    op = builtin(name)
    coarse = synthesize_kernel(op, l, N=N)
    fine = synthesize_kernel(op, l, N=2 * N)
    grid = coarse.field.grid
    mask = annulus_mask(grid, lo_cells * grid.h, grid.L / 8, coarse.field.singular)
    idx = np.argwhere(mask)
    origin = np.array(grid.origin_index)
    fine_idx = 2 * (idx - origin) + np.array(fine.field.grid.origin_index)
    a = coarse.field.values[tuple(idx.T)].reshape(len(idx), -1)
    b = fine.field.values[tuple(fine_idx.T)].reshape(len(idx), -1)
    if coarse.expected_homogeneity == 0 and np.abs(coarse.log_part).max() > 1e-8:
        # the periodic log kernel is fixed only up to an additive constant
        shift = (b - a).mean(axis=0)
        b = b - shift
    return float(np.linalg.norm(b - a, axis=1).max() / np.linalg.norm(a, axis=1).max())


@pytest.mark.parametrize(
    "name, l",
    [("grad(2,1)", 0), ("laplacian_power(2,1)", 0), ("laplacian_power(2,1)", 1), ("laplacian_power(2,2)", 2), ("div_curl(2)", 0)],
)
def test_resolution_stability(name, l):
    assert _resolution_change(name, l) < 0.02


@pytest.mark.xfail(
    strict=True,
    reason="0-homogeneous angularly varying kernel: band-limiting error at 4h exceeds 2%; see the 8h check",
)
def test_resolution_stability_a1_full_annulus():
    assert _resolution_change("A1", 0) < 0.02


def test_resolution_stability_a1_from_8h():
    assert _resolution_change("A1", 0, lo_cells=8) < 0.02


def test_kernel_bit_stable():
    a = synthesize_kernel(builtin("A2"), 0, N=64).field.to_bytes()
    b = synthesize_kernel(builtin("A2"), 0, N=64).field.to_bytes()
    assert a == b


def test_grid_for_kernel():
    b = synthesize_kernel(builtin("grad(2,1)"), 0, N=64, L=2.0)
    assert b.field.grid == Grid(2, 2.0, 64)
    assert b.field.values.shape == (64, 64, 1, 2)
