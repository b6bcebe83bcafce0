import csv
import io
from math import inf, sqrt

import numpy as np
import pytest

from opcancel import Operator, builtin
from opcancel.grid import Grid, GridField
from opcancel.kernels import NotInJError, fundamental_witness
from opcancel.lorentz import LorentzSpec
from opcancel.operator import monomials
from opcancel.probes import (
    apply_operator_spectral,
    derivatives_spectral,
    mollified_blowup_probe,
    planewave_witness,
    ratio_probe,
    taylor_scan,
)
from opcancel.symbol_analysis import NotApplicableError, RefusedError, symbol

# --------------------------------------------------------------------------- spectral application


def field_2d(N, fn, L=np.pi):
    g = Grid(2, L, N)
    x = g.coords()
    return g, GridField(g, np.stack(fn(x[..., 0], x[..., 1]), axis=-1))


def test_laplacian_of_sine():
    g, u = field_2d(64, lambda a, b: [np.sin(a)])
    out = apply_operator_spectral(builtin("laplacian_power(2,1)"), u)
    assert np.abs(out.values[..., 0] + np.sin(g.coords()[..., 0])).max() <= 1e-12


def fd_a1(u, h):
    """A1 by centered second differences (periodic)."""

    def d11(f):
        return (np.roll(f, -1, 0) - 2 * f + np.roll(f, 1, 0)) / h**2

    def d22(f):
        return (np.roll(f, -1, 1) - 2 * f + np.roll(f, 1, 1)) / h**2

    def d12(f):
        pp = np.roll(np.roll(f, -1, 0), -1, 1)
        pm = np.roll(np.roll(f, -1, 0), 1, 1)
        mp = np.roll(np.roll(f, 1, 0), -1, 1)
        mm = np.roll(np.roll(f, 1, 0), 1, 1)
        return (pp - pm - mp + mm) / (4 * h**2)

    u1, u2 = u[..., 0], u[..., 1]
    # rows of the A1 symbol: (x1^2 - x2^2, 2 x1 x2) and (-2 x1 x2, x1^2 - x2^2)
    return np.stack([d11(u1) - d22(u1) + 2 * d12(u2), -2 * d12(u1) + d11(u2) - d22(u2)], axis=-1)


def test_a1_on_plane_wave_against_finite_differences():
    g, u = field_2d(128, lambda a, b: [np.sin(a + b), 0 * a])
    out = apply_operator_spectral(builtin("A1"), u).values
    s = np.sin(g.coords().sum(axis=-1))
    assert np.abs(out[..., 0]).max() <= 1e-11
    assert np.abs(out[..., 1] - 2 * s).max() <= 1e-11
    fd = fd_a1(u.values, g.h)
    assert np.abs(fd - out).max() <= 2 * g.h**2


def test_spectral_vs_finite_difference_order():
    def fn(a, b):
        return [np.exp(np.sin(a)) * np.cos(b), np.sin(a) * np.exp(np.cos(b))]

    errs, hs = [], []
    for N in (32, 64, 128):
        g, u = field_2d(N, fn)
        spec = apply_operator_spectral(builtin("A1"), u).values
        errs.append(np.abs(fd_a1(u.values, g.h) - spec).max())
        hs.append(g.h)
    orders = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(orders >= 1.8)


@pytest.mark.parametrize("name", ["A1", "A2", "grad(2,1)", "div_curl(2)", "laplacian_power(2,2)"])
def test_constants_are_annihilated(name):
    op = builtin(name)
    g = Grid(2, np.pi, 16)
    u = GridField(g, np.full(g.shape + (op.dim_v,), 3.25))
    assert np.abs(apply_operator_spectral(op, u).values).max() <= 1e-12


def test_shape_mismatch_rejected():
    g, u = field_2d(16, lambda a, b: [a * 0, a * 0, a * 0])
    with pytest.raises(ValueError, match="dimV=2"):
        apply_operator_spectral(builtin("A1"), u)


def test_derivatives_of_trig_product():
    g, u = field_2d(32, lambda a, b: [np.sin(a) * np.cos(2 * b)])
    d = derivatives_spectral(u, 1).values[..., 0, :]
    x1, x2 = g.coords()[..., 0], g.coords()[..., 1]
    expected = {(1, 0): np.cos(x1) * np.cos(2 * x2), (0, 1): -2 * np.sin(x1) * np.sin(2 * x2)}
    for i, beta in enumerate(monomials(2, 1)):
        assert np.abs(d[..., i] - expected[beta]).max() <= 1e-12


# --------------------------------------------------------------------------- mollified blow-up


def test_laplacian_grows(dichotomy_rows):
    res = dichotomy_rows["laplacian_power(2,1)"].probe
    assert res.verdict == "grows"
    assert res.slope > 0 and res.r2 >= 0.98
    assert res.extras["growth_factor"] >= 3


def test_a1_bounded(dichotomy_rows):
    res = dichotomy_rows["A1"].probe
    assert res.verdict == "bounded"
    assert abs(res.slope) <= 0.05 * float(np.mean(res.statistics))
    assert res.extras["total_variation"] <= 0.10 * res.extras["mean"]


def test_laplacian_div_curl_bounded(dichotomy_rows):
    assert dichotomy_rows["laplacian_div_curl_3d"].probe.verdict == "bounded"


def test_au_l1_equals_w_norm(dichotomy_rows):
    for row in dichotomy_rows.values():
        if row.probe is not None:
            assert row.probe.extras["Au_L1_max_rel_dev"] <= 0.01, row.operator


def test_dichotomy_agrees_everywhere(dichotomy_rows):
    assert all(row.agrees for row in dichotomy_rows.values()), {k: r.verdict for k, r in dichotomy_rows.items()}


def test_blowup_rejects_w_outside_j():
    with pytest.raises(NotInJError, match="not a nonzero element of J"):
        mollified_blowup_probe(builtin("A2"), [0, 0, 1, 0, 0], epsilons=[1 / 8, 1 / 16, 1 / 32], N=128, L=1.0)


def test_blowup_rejects_epsilon_below_resolution():
    with pytest.raises(ValueError, match="below resolution"):
        mollified_blowup_probe(builtin("A1"), [1, 0], epsilons=[1 / 8, 1 / 16, 1 / 32], N=64, L=1.0)


def test_blowup_rejects_non_geometric_epsilons():
    with pytest.raises(ValueError, match="geometric"):
        mollified_blowup_probe(builtin("A1"), [1, 0], epsilons=[1 / 8, 1 / 16, 1 / 20], N=256, L=1.0)


def test_blowup_refuses_k_below_n():
    with pytest.raises(NotApplicableError, match="k >= n"):
        mollified_blowup_probe(builtin("grad(2,1)"), [1, 0])


def test_blowup_is_deterministic():
    kw = dict(epsilons=[1 / 8, 1 / 16, 1 / 32], N=256, L=1.0)
    a = mollified_blowup_probe(builtin("A1"), [1, 0], **kw).to_dict()
    b = mollified_blowup_probe(builtin("A1"), [1, 0], **kw).to_dict()
    assert a == b


# --------------------------------------------------------------------------- ratio probe


def test_sym_grad_ratios_bounded():
    res = ratio_probe(builtin("sym_grad(2)"), 1, count=50, seed=0)
    assert res.verdict == "bounded"
    assert res.extras["max_over_median"] <= 10
    assert "mollified" not in res.extras  # canceling: J = {0}


def test_div_curl_mollified_l2_grows_like_sqrt_log():
    res = ratio_probe(builtin("div_curl(2)"), 1, count=4, seed=0)
    trend = res.extras["mollified"]
    assert trend["verdict"] == "grows"
    assert trend["r2"] >= 0.9


@pytest.mark.parametrize("name", ["A1", "A2", "laplacian_power(2,1)", "hessian(2)"])
def test_weak_type_ratios_finite_at_j_equal_n(name):
    res = ratio_probe(builtin(name), 2, count=10, seed=1)
    assert np.all(np.isfinite(res.statistics)) and min(res.statistics) > 0
    assert res.verdict == "bounded"


def test_ratio_j_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        ratio_probe(builtin("grad(2,1)"), 2, count=2)
    with pytest.raises(ValueError, match="out of range"):
        ratio_probe(builtin("A1"), 0, count=2)


def test_ratio_seeded():
    a = ratio_probe(builtin("A1"), 2, count=5, seed=3).statistics
    b = ratio_probe(builtin("A1"), 2, count=5, seed=3).statistics
    c = ratio_probe(builtin("A1"), 2, count=5, seed=4).statistics
    assert a == b and a != c


# --------------------------------------------------------------------------- Taylor scans


def kink_scan():
    g = Grid(1, 1.0, 4096)
    u = GridField(g, np.abs(g.axis))
    radii = np.geomspace(4 * g.h, g.L / 4, 8)
    return taylor_scan(u, [0.0], 1, LorentzSpec(1, 1), radii)


def gaussian_scan():
    g = Grid(2, np.pi, 256)
    u = GridField(g, np.exp(-(g.coords() ** 2).sum(axis=-1)))
    radii = np.geomspace(4 * g.h, g.L / 4, 6)
    return taylor_scan(u, [0.0, 0.0], 2, LorentzSpec(2, 2), radii)


def witness_scan(p=2):
    op = builtin("laplacian_div_curl_3d")
    res = fundamental_witness(op, [1, 0, 0, 0], N=128)
    g = res.field.grid
    x = [16 * g.h, 0.0, 0.0]
    radii = 4 * g.h * 2 ** (np.arange(4) / 2)
    return taylor_scan(res.field, x, 1, LorentzSpec(p, p), radii)


def test_kink_exponent_is_one():
    assert kink_scan().exponent == pytest.approx(1.0, abs=0.1)


def test_gaussian_exponent_next_order():
    assert gaussian_scan().exponent >= 2.9


def test_witness_smooth_off_origin():
    assert witness_scan().exponent >= 1.9


def test_smallest_ball_polynomial_of_gaussian():
    # P^2_0 of exp(-|x|^2) is 1 - x1^2 - x2^2
    poly = gaussian_scan().polynomial
    coef = dict(zip(map(tuple, poly["exponents"]), np.array(poly["coefficients"])[:, 0]))
    assert coef[(0, 0)] == pytest.approx(1.0, abs=1e-2)
    assert coef[(2, 0)] == pytest.approx(-1.0, abs=5e-2)
    assert coef[(0, 2)] == pytest.approx(-1.0, abs=5e-2)
    assert abs(coef[(1, 1)]) <= 1e-8 and abs(coef[(1, 0)]) <= 1e-8


def test_polynomial_is_reproduced_exactly():
    g = Grid(2, 1.0, 128)
    x = g.coords()
    u = GridField(g, 1 + 2 * x[..., 0] - 3 * x[..., 0] * x[..., 1])
    scan = taylor_scan(u, [0.0, 0.0], 2, LorentzSpec(2, 2), [4 * g.h, 8 * g.h, 16 * g.h])
    assert max(scan.remainders) <= 1e-12


def test_taylor_rejects_non_grid_point():
    g = Grid(1, 1.0, 64)
    with pytest.raises(ValueError, match="not a grid point"):
        taylor_scan(GridField(g, g.axis), [g.h / 3], 1, LorentzSpec(1, 1), [4 * g.h, 8 * g.h])


def test_taylor_rejects_radii_out_of_range():
    g = Grid(1, 1.0, 64)
    with pytest.raises(ValueError, match="radii"):
        taylor_scan(GridField(g, g.axis), [0.0], 1, LorentzSpec(1, 1), [g.h, 8 * g.h])
    with pytest.raises(ValueError, match="at least 2"):
        taylor_scan(GridField(g, g.axis), [0.0], 1, LorentzSpec(1, 1), [8 * g.h])


def test_taylor_too_few_cells():
    g = Grid(1, 1.0, 64)
    with pytest.raises(ValueError, match="too few cells"):
        taylor_scan(GridField(g, g.axis), [0.0], 4, LorentzSpec(1, 1), [4 * g.h, 8 * g.h])


def test_taylor_infinite_p():
    scan = kink_scan()
    g = Grid(1, 1.0, 4096)
    sup = taylor_scan(GridField(g, np.abs(g.axis)), [0.0], 1, LorentzSpec(inf, inf), scan.radii)
    assert np.all(np.isfinite(sup.remainders))


# --------------------------------------------------------------------------- plane waves


def test_planewave_d_dx1():
    res = planewave_witness(builtin("d_dx1(2)"))
    np.testing.assert_allclose(np.abs(res.xi), [0, 1], atol=1e-12)
    np.testing.assert_allclose(np.abs(res.v), [1], atol=1e-12)
    assert res.spectral_residual <= 1e-10
    vals = res.field.values[..., 0]
    # each term depends on x2 only
    assert np.abs(vals - vals[:1]).max() <= 1e-12
    assert res.diverges


def test_planewave_diagonal_null_direction():
    op = Operator("d1+d2", 2, 1, 1, 1, {(1, 0): [[1]], (0, 1): [[1]]})
    res = planewave_witness(op)
    xi = np.array(res.xi)
    assert abs(xi @ [1, 1]) <= 1e-12
    np.testing.assert_allclose(np.abs(xi), [1 / sqrt(2)] * 2, atol=1e-12)
    assert np.linalg.norm(symbol(op, xi) @ np.array(res.v)) <= 1e-10
    assert res.spectral_residual <= 1e-10 and res.diverges


def test_planewave_refuses_elliptic():
    with pytest.raises(RefusedError, match="no null direction"):
        planewave_witness(builtin("grad(2,1)"))


# --------------------------------------------------------------------------- result records


def test_probe_result_invariants(dichotomy_rows):
    for row in dichotomy_rows.values():
        if row.probe is None:
            continue
        res = row.probe
        assert np.all(np.diff(res.parameters) > 0)
        assert 0.0 <= res.r2 <= 1.0
        rows = list(csv.reader(io.StringIO(res.to_csv())))
        assert rows[0] == ["parameter", "statistic"]
        assert [float(r[1]) for r in rows[1:]] == res.statistics
        d = res.to_dict()
        assert d["inputs_digest"] == res.digest and len(d["series"]) == len(res.statistics)
