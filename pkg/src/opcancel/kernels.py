"""Convolution kernels and fundamental solutions on periodic grids.

Fields are inverse discrete Fourier transforms of homogeneous multipliers
built from the pseudoinverse symbol.  The zero mode is dropped
(``A^dagger[0] = 0``) and so is the unpaired Nyquist mode, which keeps every
synthesized field real.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi

import numpy as np
from scipy.stats import linregress

from .grid import Grid, GridField, ifftn
from .operator import Operator, monomial_values, monomials, symbols
from .symbol_analysis import (
    CERTIFIED_NO,
    NonEllipticError,
    NotApplicableError,
    RefusedError,
    Subspace,
    WCMatrix,
    ellipticity,
    image_basis,
    image_intersection,
    pseudoinverse_apply,
    pseudoinverses,
    wc_matrix,
)
from .sphere import axis_directions, halton_net, random_directions


class NotInJError(RefusedError):
    def __init__(self, message: str, xi=None):
        super().__init__(message)
        self.xi = None if xi is None else [float(x) for x in xi]


@dataclass
class KernelBundle:
    """``D^l K^A`` sampled on a grid.

    ``field.values`` has shape ``(N,)*n + (dim_v * nbeta, dim_w)`` with rows
    ordered ``v``-major over the degree-``l`` monomials, the same layout as
    :class:`~opcancel.symbol_analysis.WCMatrix`.
    """

    op: Operator
    l: int
    field: GridField
    expected_homogeneity: int
    log_part: np.ndarray | None = None
    row_labels: list = field(default_factory=list)


def _require_elliptic(op: Operator) -> None:
    rep = ellipticity(op)
    if rep.verdict == CERTIFIED_NO:
        raise NonEllipticError(f"{op.name} is not elliptic: null direction xi={rep.witness_xi}", rep.witness_xi)


def check_derivative_order(op: Operator, l: int) -> None:
    """Refuse ``l`` outside ``[max(0, k - n), k - 1]``.

    Below ``k - n`` the multiplier ``|xi|^{l-k}`` is not integrable at the
    origin; at ``l >= k`` the kernel is not locally integrable.
    """
    lo, hi = max(0, op.k - op.n), op.k - 1
    d = op.k - op.n - l
    if l < lo:
        raise RefusedError(
            f"l={l} too small: D^l K would be {d}-homogeneous (> 0), its multiplier is not "
            f"locally integrable at xi=0; use l in [{lo}, {hi}]"
        )
    if l > hi:
        raise RefusedError(
            f"l={l} too large: D^l K would be {d}-homogeneous (<= -n={-op.n}), not locally "
            f"integrable at x=0; use l in [{lo}, {hi}]"
        )


def _pinv_on_grid(op: Operator, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    xis = grid.frequencies().reshape(-1, op.n)
    pinv = pseudoinverses(op, xis)
    pinv[grid.nyquist_mask().ravel()] = 0.0
    return xis, pinv


def smoothing_width(grid: Grid, homogeneity: int) -> float:
    """Gaussian filter width used for kernels of negative homogeneity, else 0.

    Multipliers decaying slower than ``|xi|^{-n}`` ring at the grid scale when
    truncated at the Nyquist frequency.  A radial Gaussian of width ``h``
    suppresses the ringing and, being radial and concentrated well inside
    ``4h``, leaves harmonic kernels essentially unchanged on the annulus.

    On a line the 0-homogeneous kernels are step functions whose jump at the
    origin leaves a Gibbs tail decaying only like ``h/|x|``; the same filter
    removes it at exponentially small cost off the origin, so it is used
    there as well.  In higher dimensions 0-homogeneous kernels vary with the
    angle and the filter would bias them by ``O((h/|x|)^2)``.
    """
    if homogeneity < 0 or (homogeneity == 0 and grid.n == 1):
        return grid.h
    return 0.0


def _to_space(spectrum: np.ndarray, grid: Grid, sigma: float = 0.0) -> np.ndarray:
    if sigma > 0:
        xi2 = (grid.frequencies() ** 2).sum(axis=-1)
        filt = np.exp(-0.5 * sigma**2 * xi2)
        spectrum = spectrum * filt.reshape(grid.shape + (1,) * (spectrum.ndim - grid.n))
    vals = ifftn(spectrum, grid.n).real / grid.cell_volume
    return np.fft.fftshift(vals, axes=tuple(range(grid.n)))


def _origin_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    mask[grid.origin_index] = True
    return mask


def synthesize_kernel(op: Operator, l: int, N: int = 256, L: float = np.pi) -> KernelBundle:
    """Sample ``D^l K^A`` on ``[-L, L)^n`` with ``N`` points per axis."""
    check_derivative_order(op, l)
    _require_elliptic(op)
    grid = Grid(op.n, L, N)
    xis, pinv = _pinv_on_grid(op, grid)
    betas = monomials(op.n, l)
    mono = monomial_values(xis, betas)
    phase = (1j) ** ((l - op.k) % 4)
    spec = phase * np.einsum("qb,qvw->qvbw", mono, pinv)
    spec = spec.reshape(grid.shape + (op.dim_v * len(betas), op.dim_w))
    d = op.k - op.n - l
    sigma = smoothing_width(grid, d)
    vals = _to_space(spec, grid, sigma)
    log_part = None
    if d == 0:
        log_part = wc_matrix(op).L
    labels = [f"v{v + 1}*D^{list(b)}" for v in range(op.dim_v) for b in betas]
    gf = GridField(grid, vals, _origin_mask(grid), {"kind": "kernel", "operator": op.name, "l": l, "smoothing": sigma})
    return KernelBundle(op, l, gf, d, log_part, labels)


def annulus_mask(grid: Grid, r_lo: float, r_hi: float, singular=None) -> np.ndarray:
    r = grid.radius()
    mask = (r >= r_lo) & (r <= r_hi)
    if singular is not None:
        mask &= ~singular
    return mask


def default_annulus(grid: Grid) -> tuple[float, float]:
    return 4 * grid.h, grid.L / 8


def _scaled_pairs(gf: GridField, s: float, annulus) -> tuple[np.ndarray, np.ndarray]:
    grid = gf.grid
    lo, hi = annulus if annulus is not None else default_annulus(grid)
    tol = 1e-9 * grid.L
    if lo < 4 * grid.h - tol or hi > grid.L / 4 + tol or lo >= hi:
        raise ValueError(f"annulus [{lo}, {hi}] must lie within [4h, L/4] = [{4 * grid.h}, {grid.L / 4}]")
    if s <= 0 or s * hi > grid.L / 2 + tol:
        raise ValueError(f"scaled annulus [{s * lo}, {s * hi}] leaves the box interior (L/2 = {grid.L / 2})")
    idx = np.argwhere(annulus_mask(grid, lo, hi, gf.singular))
    origin = np.array(grid.origin_index)
    scaled = origin + np.rint(s * (idx - origin)).astype(int)
    return idx, scaled


def _values_at(gf: GridField, idx: np.ndarray) -> np.ndarray:
    return gf.values[tuple(idx.T)].reshape(len(idx), -1)


def homogeneity_check(bundle: KernelBundle, s: float = 2.0, annulus=None) -> float:
    """Max relative deviation of ``K(s x)`` from ``s^d K(x)`` over an annulus.

    The scaled point is sampled at its nearest grid neighbour.  Deviations
    are normalized by the largest ``|s^d K(x)|`` on the annulus.
    """
    d = bundle.expected_homogeneity
    if d == 0 and bundle.log_part is not None and np.abs(bundle.log_part).max() > 1e-8:
        raise RefusedError("kernel has a logarithmic part (d = 0, L != 0); use decompose_log")
    idx, scaled = _scaled_pairs(bundle.field, s, annulus)
    base = s**d * _values_at(bundle.field, idx)
    other = _values_at(bundle.field, scaled)
    return float(np.linalg.norm(other - base, axis=1).max() / np.linalg.norm(base, axis=1).max())


@lru_cache(maxsize=None)
def log_constant(n: int) -> float:
    """Coefficient ``c_n`` with ``D^{k-n} K = H_0 + c_n log|x| L`` under this module's transform.

    For ``n = 2`` it is calibrated once by fitting the Laplacian kernel to
    ``a + b log|x|`` (``L = 2 pi`` there).  Other dimensions use the closed
    form ``-(-1)^{n/2} (2 pi)^{-n}`` of the same convention.
    """
    if n == 2:
        from .registry import laplacian_power

        bundle = synthesize_kernel(laplacian_power(2, 1), 0, N=256, L=np.pi)
        grid = bundle.field.grid
        mask = annulus_mask(grid, *default_annulus(grid), bundle.field.singular)
        r = grid.radius()[mask]
        fit = linregress(np.log(r), bundle.field.values[..., 0, 0][mask])
        return float(fit.slope / (2 * pi))
    return float(-((-1) ** (n // 2)) * (2 * pi) ** (-n))


@dataclass
class LogDecomposition:
    residual_deviation: float
    log_constant: float
    L: np.ndarray
    residual: GridField


def decompose_log(bundle: KernelBundle, L_matrix: WCMatrix | np.ndarray | None = None, s: float = 2.0, annulus=None):
    """Subtract ``c_n log|x| L`` from ``D^{k-n} K`` and measure 0-homogeneity of the rest.

    The deviation is ``max |R(s x) - R(x)| / max |R(x)|`` over the annulus.
    """
    op = bundle.op
    if op.k < op.n:
        raise NotApplicableError(f"log decomposition needs k >= n (k={op.k}, n={op.n})")
    if bundle.expected_homogeneity != 0:
        raise ValueError(f"log decomposition needs l = k - n = {op.k - op.n}, got l={bundle.l}")
    if L_matrix is None:
        L = bundle.log_part if bundle.log_part is not None else wc_matrix(op).L
    else:
        L = L_matrix.L if isinstance(L_matrix, WCMatrix) else np.asarray(L_matrix)
    c = log_constant(op.n)
    grid = bundle.field.grid
    r = grid.radius()
    with np.errstate(divide="ignore"):
        logr = np.where(bundle.field.singular, 0.0, np.log(np.where(r > 0, r, 1.0)))
    comp = bundle.field.component_shape
    resid_vals = bundle.field.values - c * logr.reshape(grid.shape + (1,) * len(comp)) * L
    resid = GridField(grid, resid_vals, bundle.field.singular, {"kind": "log_residual"})
    idx, scaled = _scaled_pairs(resid, s, annulus)
    base = _values_at(resid, idx)
    other = _values_at(resid, scaled)
    dev = float(np.linalg.norm(other - base, axis=1).max() / np.linalg.norm(base, axis=1).max())
    return LogDecomposition(dev, c, L, resid)


def radial_trend(bundle: KernelBundle, count: int = 8, annulus=None) -> dict:
    """Fit ``max |K|`` on thin shells against ``log(1/r)``.

    A logarithmic kernel produces an affine trend; a 0-homogeneous one a flat
    trend.  Returns slope, R^2 and the amplitude (mean statistic).
    """
    grid = bundle.field.grid
    lo, hi = annulus if annulus is not None else default_annulus(grid)
    if not lo < hi:
        raise ValueError(f"annulus [{lo:g}, {hi:g}] is empty; refine the grid (N > 64 for [4h, L/8])")
    radii = np.geomspace(lo, hi, count)
    r = grid.radius()
    mag = bundle.field.magnitude()
    stats = []
    for rad in radii:
        shell = (np.abs(r - rad) <= grid.h / 2) & ~bundle.field.singular
        stats.append(float(mag[shell].max()))
    stats = np.array(stats)
    fit = linregress(np.log(1 / radii), stats)
    return {
        "radii": radii.tolist(),
        "stat": stats.tolist(),
        "slope": float(fit.slope),
        "r2": float(fit.rvalue**2),
        "amplitude": float(stats.mean()),
    }


@dataclass
class WitnessResult:
    field: GridField
    residual: float
    w: np.ndarray
    J: Subspace


def _offending_direction(op: Operator, w: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(0)
    cands = np.concatenate([axis_directions(op.n), halton_net(op.n, 4**op.n), random_directions(op.n, 256, rng)])
    best, best_xi = -1.0, cands[0]
    for xi in cands:
        u = image_basis(symbols(op, xi[None, :])[0])
        d = float(np.linalg.norm(w - u @ (u.T @ w)))
        if d > best:
            best, best_xi = d, xi
    return best_xi


def fundamental_witness(
    op: Operator, w, N: int = 128, L: float = np.pi, J: Subspace | None = None, seed: int = 0
) -> WitnessResult:
    """Field ``u_h = K^A w`` with ``A u_h = delta_0 w``; requires ``w`` in ``J``."""
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (op.dim_w,):
        raise ValueError(f"w must have {op.dim_w} components, got {w.shape[0]}")
    _require_elliptic(op)
    if J is None:
        J = image_intersection(op, seed=seed)
    if not J.contains(w, 1e-8):
        xi = _offending_direction(op, w)
        raise NotInJError(
            f"w={w.tolist()} is not in J (dim {J.dim}); w is not in im A[xi] at xi={np.round(xi, 12).tolist()}", xi
        )
    grid = Grid(op.n, L, N)
    uhat, residual = pseudoinverse_apply(op, grid.frequencies().reshape(-1, op.n), w)
    uhat[grid.nyquist_mask().ravel()] = 0.0
    spec = (1j) ** ((-op.k) % 4) * uhat.reshape(grid.shape + (op.dim_v,))
    sigma = smoothing_width(grid, op.k - op.n)
    vals = _to_space(spec, grid, sigma)
    gf = GridField(
        grid, vals, _origin_mask(grid), {"kind": "fundamental_witness", "operator": op.name, "smoothing": sigma}
    )
    return WitnessResult(gf, residual, w, J)
