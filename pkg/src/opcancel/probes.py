"""Numerical probes: spectral operator application, blow-up and ratio
series, Taylor remainder scans and plane-wave witnesses.

Every probe returns a :class:`ProbeResult` (or a dedicated record) with the
raw ``(parameter, statistic)`` series, so verdicts can be re-derived from the
report alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import inf
from typing import Optional, Sequence

import numpy as np
from scipy.stats import linregress, qmc

from .grid import Grid, GridField, fftn, ifftn
from .kernels import NotInJError, _offending_direction
from .lorentz import LorentzSpec, lorentz_norm, lp_norm
from .operator import Operator, monomial_values, monomials, symbols
from .symbol_analysis import (
    CERTIFIED_NO,
    NonEllipticError,
    NotApplicableError,
    RefusedError,
    Subspace,
    ellipticity,
    image_intersection,
    pseudoinverse_apply,
    wc_test,
)

GROWTH_R2 = 0.98
GROWTH_FACTOR = 3.0
BOUNDED_TV = 0.10
RATIO_BOUND = 10.0
TREND_R2 = 0.9
RANDOM_BUMPS = 16


@dataclass
class ProbeResult:
    kind: str
    inputs: dict
    parameters: list
    statistics: list
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r2: Optional[float] = None
    verdict: str = "inconclusive"
    expectation: Optional[str] = None
    extras: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.inputs, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def agrees(self) -> Optional[bool]:
        return None if self.expectation is None else self.verdict == self.expectation

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": self.inputs,
            "inputs_digest": self.digest,
            "series": [[p, s] for p, s in zip(self.parameters, self.statistics)],
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "verdict": self.verdict,
            "expectation": self.expectation,
            "agrees": self.agrees,
            "extras": self.extras,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "statistic"])
        for p, s in zip(self.parameters, self.statistics):
            w.writerow([repr(float(p)), repr(float(s))])
        return buf.getvalue()


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    fit = linregress(x, y)
    r2 = float(fit.rvalue**2) if np.isfinite(fit.rvalue) else 0.0
    return float(fit.slope), float(fit.intercept), min(max(r2, 0.0), 1.0)


# --------------------------------------------------------------------------- spectral operators


def _phase(power: int) -> complex:
    return (1j) ** (power % 4)


def _components(u: GridField) -> np.ndarray:
    """Values reshaped to ``grid.shape + (m,)``."""
    return u.values.reshape(u.grid.shape + (-1,))


def derivative_spectrum(grid: Grid, order: int) -> tuple[list, np.ndarray]:
    """Monomials of degree ``order`` and ``(i xi)^beta`` on the FFT grid, shape ``(Q, nbeta)``."""
    betas = monomials(grid.n, order)
    xis = grid.frequencies().reshape(-1, grid.n)
    mult = _phase(order) * monomial_values(xis, betas)
    mult[grid.nyquist_mask().ravel()] = 0.0
    return betas, mult


def apply_operator_spectral(op: Operator, u: GridField) -> GridField:
    """``A(D^k u)`` by applying ``i^k A[xi]`` frequency-wise.

    Exact for band-limited input; the unpaired Nyquist mode is dropped.
    """
    comps = _components(u)
    if comps.shape[-1] != op.dim_v or u.grid.n != op.n:
        raise ValueError(
            f"field has {comps.shape[-1]} components on R^{u.grid.n}; {op.name} expects dimV={op.dim_v} on R^{op.n}"
        )
    grid = u.grid
    uhat = fftn(comps, grid.n).reshape(-1, op.dim_v)
    xis = grid.frequencies().reshape(-1, op.n)
    out = _phase(op.k) * np.einsum("qwv,qv->qw", symbols(op, xis), uhat)
    out[grid.nyquist_mask().ravel()] = 0.0
    vals = ifftn(out.reshape(grid.shape + (op.dim_w,)), grid.n).real
    return GridField(grid, vals, meta={"kind": "Au", "operator": op.name})


def derivatives_spectral(u: GridField, order: int) -> GridField:
    """All partial derivatives ``D^beta u`` with ``|beta| = order``; components ``(m, nbeta)``."""
    grid = u.grid
    comps = _components(u)
    _, mult = derivative_spectrum(grid, order)
    uhat = fftn(comps, grid.n).reshape(-1, comps.shape[-1])
    spec = np.einsum("qm,qb->qmb", uhat, mult)
    vals = ifftn(spec.reshape(grid.shape + spec.shape[1:]), grid.n).real
    return GridField(grid, vals, meta={"kind": "derivative", "order": order})


def field_lorentz_norm(u: GridField, spec: LorentzSpec, mask: np.ndarray | None = None) -> float:
    """Lorentz norm of the pointwise magnitude of ``u``, singular cells excluded."""
    m = ~u.singular if mask is None else (np.asarray(mask, dtype=bool) & ~u.singular)
    return lorentz_norm(u.magnitude(), spec, u.grid.cell_volume, m)


# --------------------------------------------------------------------------- mollified families


def default_probe_grid(n: int) -> tuple[int, float]:
    """``(N, L)`` resolving ``eps = 2^-8`` at ``4h`` for ``n <= 2`` and ``2^-5`` for ``n = 3``."""
    return {1: (65536, 8.0), 2: (2048, 1.0), 3: (128, 1.0)}.get(n, (32, 1.0))


def default_epsilons(n: int) -> list[float]:
    if n <= 2:
        return [2.0**-e for e in range(3, 9)]
    return [2.0 ** (-3 - e / 2) for e in range(3)]


def _check_epsilons(eps: Sequence[float], grid: Grid) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.size < 3:
        raise ValueError("need at least 3 epsilons")
    if np.any(np.diff(eps) >= 0) and np.any(np.diff(eps) <= 0):
        raise ValueError("epsilons must be strictly monotone")
    ratios = eps[1:] / eps[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("epsilons must form a geometric sequence")
    if eps.min() < 4 * grid.h * (1 - 1e-12):
        raise ValueError(f"epsilon {eps.min()} below resolution 4h = {4 * grid.h}")
    return np.sort(eps)[::-1]


def _check_w(op: Operator, w, J: Subspace | None, seed: int) -> tuple[np.ndarray, Subspace]:
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (op.dim_w,):
        raise ValueError(f"w must have {op.dim_w} components, got {w.size}")
    if J is None:
        J = image_intersection(op, seed=seed)
    if not np.any(w) or not J.contains(w, 1e-8):
        xi = _offending_direction(op, w)
        raise NotInJError(f"w={w.tolist()} is not a nonzero element of J (dim {J.dim}); fails at xi={xi.tolist()}", xi)
    return w, J


def _require_elliptic(op: Operator) -> None:
    rep = ellipticity(op)
    if rep.verdict == CERTIFIED_NO:
        raise NonEllipticError(f"{op.name} is not elliptic: null direction xi={rep.witness_xi}", rep.witness_xi)


class _MollifiedFamily:
    """``u_eps`` with ``hat u_eps = i^{-k} A^dagger[xi] w exp(-eps^2 |xi|^2 / 2)``."""

    def __init__(self, op: Operator, w: np.ndarray, grid: Grid):
        self.op, self.w, self.grid = op, w, grid
        self.xis = grid.frequencies().reshape(-1, op.n)
        pw, self.projection_residual = pseudoinverse_apply(op, self.xis, w)
        pw[grid.nyquist_mask().ravel()] = 0.0
        self.base = _phase(-op.k) * pw  # (Q, V)
        self.xi2 = (self.xis**2).sum(axis=1)

    def derivative(self, eps: float, order: int) -> np.ndarray:
        """Pointwise values of ``D^order u_eps``, shape ``(N,)*n + (V * nbeta,)``."""
        _, mult = derivative_spectrum(self.grid, order)
        g = np.exp(-0.5 * eps**2 * self.xi2)
        spec = np.einsum("qv,qb->qvb", self.base * g[:, None], mult).reshape(len(g), -1)
        vals = ifftn(spec.reshape(self.grid.shape + (-1,)), self.grid.n).real / self.grid.cell_volume
        return np.fft.fftshift(vals, axes=tuple(range(self.grid.n)))

    def Au_l1(self, eps: float) -> float:
        """``||A u_eps||_{L^1}`` with the zero mode restored to ``w``.

        Dropping ``xi = 0`` subtracts the box average ``w / |box|`` from
        ``eta_eps w``; restoring it gives the full-space density.
        """
        g = np.exp(-0.5 * eps**2 * self.xi2)
        spec = np.empty((len(g), self.op.dim_w), dtype=complex)
        step = 200_000
        for s in range(0, len(g), step):
            sym = symbols(self.op, self.xis[s : s + step])
            spec[s : s + step] = np.einsum("qwv,qv->qw", sym, self.base[s : s + step])
        spec *= _phase(self.op.k) * g[:, None]
        spec[self.xi2 == 0] = self.w
        vals = ifftn(spec.reshape(self.grid.shape + (-1,)), self.grid.n).real / self.grid.cell_volume
        return float(np.linalg.norm(vals, axis=-1).sum() * self.grid.cell_volume)


def periodization_drift(fam: "_MollifiedFamily", order: int) -> np.ndarray:
    """Linear drift ``S1`` (shape ``(n, m)``) of the periodic ``D^order K w``.

    ``D^{k-n} K`` is 0-homogeneous up to a logarithmic constant, so on the
    torus ``F(2x) - F(x) = a + S1 x + ...`` isolates the smooth correction
    contributed by the periodic images.  The affine fit runs over
    ``L/4 <= |x| <= 0.45 L`` on the unmollified field.  Subtracting ``S1 x``
    changes ``u`` by a polynomial annihilated by ``A`` when ``n > 1`` and by
    the zero-mode background when ``n = 1``.
    """
    grid = fam.grid
    F = fam.derivative(0.0, order)
    x = grid.coords()
    r = np.linalg.norm(x, axis=-1)
    idx = np.argwhere((r >= grid.L / 4) & (r <= 0.45 * grid.L))
    origin = np.array(grid.origin_index)
    scaled = origin + 2 * (idx - origin)
    diff = F[tuple(scaled.T)] - F[tuple(idx.T)]
    design = np.hstack([np.ones((len(idx), 1)), x[tuple(idx.T)]])
    coef, *_ = np.linalg.lstsq(design, diff, rcond=None)
    return coef[1:]


def blowup_verdict(eps: np.ndarray, stats: np.ndarray) -> tuple[str, float, float, float, dict]:
    x = np.log(1 / eps)
    slope, intercept, r2 = _fit(x, stats)
    ordered = stats[np.argsort(eps)[::-1]]
    factor = float(ordered[-1] / ordered[0]) if ordered[0] > 0 else inf
    tv = float(np.abs(np.diff(ordered)).sum())
    mean = float(np.mean(stats))
    if slope > 0 and r2 >= GROWTH_R2 and factor >= GROWTH_FACTOR:
        verdict = "grows"
    elif tv <= BOUNDED_TV * mean:
        verdict = "bounded"
    else:
        verdict = "inconclusive"
    return verdict, slope, intercept, r2, {"growth_factor": factor, "total_variation": tv, "mean": mean}


def mollified_blowup_probe(
    op: Operator,
    w,
    epsilons: Sequence[float] | None = None,
    N: int | None = None,
    L: float | None = None,
    J: Subspace | None = None,
    seed: int = 0,
    expectation: str | None = None,
    drift_correction: bool = True,
) -> ProbeResult:
    """Series ``(log(1/eps), sup |D^{k-n} u_eps|)`` and its growth verdict.

    ``A u_eps = eta_eps w`` for ``w`` in ``J``, so the data stay bounded in
    ``L^1`` while the statistic grows like ``log(1/eps)`` exactly when the
    logarithmic kernel part acts on ``w``.  The sup is taken over the
    inscribed ball ``|x| <= L`` after removing the linear drift that periodic images add
    (see :func:`periodization_drift`); the uncorrected whole-box sup is kept
    in ``extras["raw_sup"]``.
    """
    if op.k < op.n:
        raise NotApplicableError(f"blow-up probe needs k >= n (k={op.k}, n={op.n})")
    _require_elliptic(op)
    w, J = _check_w(op, w, J, seed)
    dN, dL = default_probe_grid(op.n)
    grid = Grid(op.n, L or dL, N or dN)
    eps = _check_epsilons(epsilons if epsilons is not None else default_epsilons(op.n), grid)
    fam = _MollifiedFamily(op, w, grid)
    order = op.k - op.n
    drift = periodization_drift(fam, order) if drift_correction else np.zeros((op.n, 1))
    x = grid.coords()
    inner = np.linalg.norm(x, axis=-1) <= grid.L
    stats, raw, l1 = [], [], []
    for e in eps:
        vals = fam.derivative(e, order)
        raw.append(float(np.linalg.norm(vals, axis=-1).max()))
        if drift_correction:
            vals = vals - x @ drift
        stats.append(float(np.linalg.norm(vals[inner], axis=-1).max()))
        l1.append(fam.Au_l1(e))
    stats = np.array(stats)
    verdict, slope, intercept, r2, extra = blowup_verdict(eps, stats)
    wn = float(np.linalg.norm(w))
    extra.update(
        statistic="sup over |x| <= L of |D^(k-n) u_eps|" + (" minus periodization drift" if drift_correction else ""),
        raw_sup=raw,
        drift=drift.tolist(),
        Au_L1=l1,
        w_norm=wn,
        Au_L1_max_rel_dev=float(np.max(np.abs(np.array(l1) - wn)) / wn),
    )
    inputs = {
        "operator": op.name,
        "w": w.tolist(),
        "N": grid.N,
        "L": grid.L,
        "epsilons": eps.tolist(),
        "drift_correction": drift_correction,
    }
    return ProbeResult(
        "blowup",
        inputs,
        [float(x) for x in np.log(1 / eps)],
        stats.tolist(),
        slope,
        intercept,
        r2,
        verdict,
        expectation,
        extra,
    )


@dataclass
class DichotomyRow:
    operator: str
    wc: str
    probe: Optional[ProbeResult]
    verdict: str
    expected: str

    @property
    def agrees(self) -> bool:
        return self.verdict == self.expected

    def to_dict(self) -> dict:
        return {
            "operator": self.operator,
            "wc": self.wc,
            "expected": self.expected,
            "verdict": self.verdict,
            "agrees": self.agrees,
            "probe": None if self.probe is None else self.probe.to_dict(),
        }


def blowup_dichotomy(names: Sequence[str] | None = None, seed: int = 0) -> list[DichotomyRow]:
    """Blow-up verdict next to the WC verdict for elliptic operators with ``k >= n``.

    ``names`` defaults to every gallery operator.  WC holding predicts a
    bounded series and WC failing predicts growth.  Canceling operators
    (``J = {0}``) admit no data ``w`` and count as vacuously bounded.
    """
    from .registry import GALLERY, builtin

    rows = []
    for name in names if names is not None else [row[0] for row in GALLERY]:
        op = builtin(name)
        if op.k < op.n or ellipticity(op, seed=seed).verdict == CERTIFIED_NO:
            continue
        J = image_intersection(op, seed=seed)
        wc = wc_test(op, J, seed=seed)
        expected = {"holds": "bounded", "fails": "grows"}.get(wc.verdict, "inconclusive")
        if J.dim == 0:
            rows.append(DichotomyRow(op.name, wc.verdict, None, "bounded", expected))
            continue
        res = mollified_blowup_probe(op, J.basis[:, 0], J=J, seed=seed, expectation=expected)
        rows.append(DichotomyRow(op.name, wc.verdict, res, res.verdict, expected))
    return rows


# --------------------------------------------------------------------------- random fields and ratios


def smooth_cutoff(grid: Grid, fraction: float = 0.8) -> np.ndarray:
    """``prod_d psi(x_d / (fraction L))`` with the standard C-infinity bump ``psi``."""
    t = grid.axis / (fraction * grid.L)
    psi = np.zeros_like(t)
    inside = np.abs(t) < 1
    psi[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    out = np.ones(grid.shape)
    for d in range(grid.n):
        shape = [1] * grid.n
        shape[d] = grid.N
        out = out * psi.reshape(shape)
    return out


def random_field(grid: Grid, components: int, rng: np.random.Generator, bumps: int = RANDOM_BUMPS) -> GridField:
    """Sum of modulated Gaussian bumps times a compactly supported cutoff."""
    x = grid.coords()
    vals = np.zeros(grid.shape + (components,))
    kmax = (grid.N / 8) * np.pi / grid.L / 4
    for _ in range(bumps):
        c = rng.uniform(-grid.L / 2, grid.L / 2, grid.n)
        sigma = rng.uniform(max(5 * grid.h, grid.L / 32), grid.L / 6)
        kvec = rng.uniform(-kmax, kmax, grid.n)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.standard_normal(components)
        r2 = ((x - c) ** 2).sum(axis=-1)
        bump = np.exp(-0.5 * r2 / sigma**2) * np.cos(x @ kvec + phase)
        vals += bump[..., None] * amp
    vals *= smooth_cutoff(grid)[..., None]
    return GridField(grid, vals, meta={"kind": "random_field"})


def _strong_norm(vals: np.ndarray, grid: Grid, n: int, j: int) -> float:
    mag = np.linalg.norm(vals.reshape(grid.shape + (-1,)), axis=-1)
    if j == n:
        return lorentz_norm(mag, LorentzSpec(inf, inf), grid.cell_volume)
    return lp_norm(mag, n / (n - j), grid.cell_volume)


def ratio_probe(
    op: Operator,
    j: int,
    count: int = 50,
    seed: int = 0,
    N: int = 128,
    L: float = np.pi,
    epsilons: Sequence[float] | None = None,
    mollified_grid: tuple[int, float] | None = None,
) -> ProbeResult:
    """Ratios ``||D^{k-j} u|| / ||A u||_{L^1}`` over seeded random fields.

    The numerator is the ``L^{n/(n-j)}`` norm, or ``L^{inf,inf}`` for ``j = n``.
    For non-canceling operators with ``j < n`` the mollified fundamental
    family is measured as well; its squared norm is fitted affinely in
    ``log(1/eps)`` (a square-root-of-log trend).
    """
    n, k = op.n, op.k
    if not 1 <= j <= min(k, n):
        raise ValueError(f"j={j} out of range [1, min(k, n)] = [1, {min(k, n)}]")
    _require_elliptic(op)
    grid = Grid(n, L, N)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(count):
        u = random_field(grid, op.dim_v, rng)
        top = _strong_norm(derivatives_spectral(u, k - j).values, grid, n, j)
        au = apply_operator_spectral(op, u)
        bottom = lp_norm(au.magnitude(), 1, grid.cell_volume)
        ratios.append(top / bottom)
    ratios = np.array(ratios)
    med = float(np.median(ratios))
    spread = float(ratios.max() / med)
    verdict = "bounded" if spread <= RATIO_BOUND else "unbounded"
    inputs = {"operator": op.name, "j": j, "count": count, "seed": seed, "N": N, "L": L}
    extras = {"max_over_median": spread, "median": med, "max": float(ratios.max())}
    J = image_intersection(op, seed=seed)
    if J.dim and j < n:
        extras["mollified"] = _mollified_trend(op, j, J, epsilons, mollified_grid).to_dict()
    return ProbeResult(
        "ratio",
        inputs,
        list(range(1, count + 1)),
        ratios.tolist(),
        verdict=verdict,
        extras=extras,
    )


def _mollified_trend(op, j, J, epsilons, mgrid) -> ProbeResult:
    n, k = op.n, op.k
    w = J.basis[:, 0]
    dN, dL = mgrid or default_probe_grid(n)
    grid = Grid(n, dL, dN)
    eps = _check_epsilons(epsilons if epsilons is not None else default_epsilons(n), grid)
    fam = _MollifiedFamily(op, w, grid)
    p = n / (n - j)
    norms = np.array([lp_norm(np.linalg.norm(fam.derivative(e, k - j), axis=-1), p, grid.cell_volume) for e in eps])
    x = np.log(1 / eps)
    slope, intercept, r2 = _fit(x, norms**2)
    increasing = bool(np.all(np.diff(norms[np.argsort(eps)[::-1]]) > 0))
    verdict = "grows" if slope > 0 and r2 >= TREND_R2 and increasing else "inconclusive"
    return ProbeResult(
        "mollified_norm",
        {"operator": op.name, "j": j, "w": w.tolist(), "N": dN, "L": dL, "p": p, "epsilons": eps.tolist()},
        x.tolist(),
        norms.tolist(),
        slope,
        intercept,
        r2,
        verdict,
        extras={"model": "norm^2 affine in log(1/eps)"},
    )


# --------------------------------------------------------------------------- Taylor scans


@dataclass
class TaylorScan:
    x: list
    k: int
    spec: LorentzSpec
    radii: list
    remainders: list
    exponent: float
    r2: float
    polynomial: dict

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "k": self.k,
            "p": self.spec.p,
            "q": self.spec.q,
            "radii": self.radii,
            "remainders": self.remainders,
            "exponent": self.exponent,
            "r2": self.r2,
            "polynomial": self.polynomial,
        }


def _poly_exponents(n: int, k: int) -> list:
    return [a for d in range(k + 1) for a in monomials(n, d)]


def _ball_fit(disp: np.ndarray, vals: np.ndarray, exps: list, r: float) -> np.ndarray:
    design = monomial_values(disp / r, exps)
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    return coef


def taylor_scan(
    u: GridField, x, k: int, spec: LorentzSpec, radii: Sequence[float], fit: str = "per_ball"
) -> TaylorScan:
    """Remainder of a degree-``k`` polynomial fit at ``x`` on shrinking balls.

    With ``fit="per_ball"`` the polynomial is refitted by least squares on each
    ball, so the remainder is the best degree-``k`` approximation error and a
    kink of order ``r`` scans with exponent exactly 1.  With
    ``fit="smallest"`` one least-squares fit on the smallest ball is reused
    for all radii.  The reported polynomial is always the smallest-ball fit.
    Each remainder ``||u - P||_{L^{p,q}(B_r)}`` is divided by ``r^{n/p}`` (an
    averaged norm), and the decay exponent is the log-log slope.
    """
    if fit not in ("per_ball", "smallest"):
        raise ValueError(f"fit must be 'per_ball' or 'smallest', got {fit!r}")
    grid = u.grid
    x = np.asarray(x, dtype=float).ravel()
    idx = (x + grid.L) / grid.h
    if x.shape != (grid.n,) or not np.allclose(idx, np.rint(idx), atol=1e-9):
        raise ValueError(f"x={x.tolist()} is not a grid point")
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if radii.size < 2 or np.any(np.diff(radii) >= 0):
        raise ValueError("need at least 2 distinct radii")
    tol = 1e-9 * grid.L
    if radii.min() < 4 * grid.h - tol or radii.max() > grid.L / 4 + tol:
        raise ValueError(f"radii must lie within [4h, L/4] = [{4 * grid.h}, {grid.L / 4}]")
    # periodic displacement from x
    disp = grid.coords() - x
    disp = (disp + grid.L) % (2 * grid.L) - grid.L
    dist = np.linalg.norm(disp, axis=-1)
    comps = _components(u)
    usable = ~u.singular
    exps = _poly_exponents(grid.n, k)
    rmin = radii[-1]
    ball = (dist <= rmin) & usable
    if ball.sum() < 2 * len(exps):
        raise ValueError(f"too few cells ({int(ball.sum())}) in the smallest ball for degree {k}")
    coef = _ball_fit(disp[ball], comps[ball], exps, rmin)
    rems = []
    for r in radii:
        b = (dist <= r) & usable
        if fit == "per_ball":
            resid = comps[b] - monomial_values(disp[b] / r, exps) @ _ball_fit(disp[b], comps[b], exps, r)
        else:
            resid = comps[b] - monomial_values(disp[b] / rmin, exps) @ coef
        mag = np.linalg.norm(resid, axis=-1)
        scale = 1.0 if spec.p == inf else r ** (grid.n / spec.p)
        rems.append(lorentz_norm(mag, spec, grid.cell_volume) / scale)
    rems = np.array(rems)
    slope, _, r2 = _fit(np.log(radii), np.log(np.maximum(rems, 1e-300)))
    poly = {
        "exponents": [list(e) for e in exps],
        "coefficients": (coef / rmin ** np.array([sum(e) for e in exps])[:, None]).tolist(),
        "fit": fit,
    }
    return TaylorScan(x.tolist(), k, spec, radii.tolist(), rems.tolist(), slope, r2, poly)


# --------------------------------------------------------------------------- plane waves


@dataclass
class PlaneWaveResult:
    xi: list
    v: list
    field: GridField
    direction: list  # integer direction used for the periodic profile
    spectral_residual: float
    subbox_norms: list
    resolutions: list
    diverges: bool
    p: float

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "v": self.v,
            "integer_direction": self.direction,
            "spectral_residual": self.spectral_residual,
            "p": self.p,
            "resolutions": self.resolutions,
            "subbox_Lp_norms": self.subbox_norms,
            "diverges": self.diverges,
        }


def _integer_direction(xi: np.ndarray, max_den: int = 16) -> np.ndarray:
    i = int(np.argmax(np.abs(xi)))
    ratios = [Fraction(float(c / xi[i])).limit_denominator(max_den) for c in xi]
    den = int(np.lcm.reduce([r.denominator for r in ratios]))
    vec = np.array([int(r * den) for r in ratios])
    g = int(np.gcd.reduce(np.abs(vec[vec != 0])))
    return vec // g


def _profile(t: np.ndarray, L: float, p: float, clip: float) -> np.ndarray:
    """``rho(t) |t|^{-1/p}`` on the ``2L``-periodic line, clipped at ``|t| >= clip``."""
    t = (t + L) % (2 * L) - L
    s = t / (L / 2)
    rho = np.zeros_like(t)
    inside = np.abs(s) < 1
    rho[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return rho * np.maximum(np.abs(t), clip) ** (-1.0 / p)


def _centers(n: int, L: float, count: int = 8) -> np.ndarray:
    return (qmc.Halton(d=n, scramble=False).random(count + 1)[1:] - 0.5) * L


def plane_wave_field(grid: Grid, direction: np.ndarray, v: np.ndarray, p: float, terms: int = 8) -> GridField:
    """``sum_l 2^{-l} g((x - x_l) . d) v`` with clipped singular profile ``g``."""
    x = grid.coords()
    vals = np.zeros(grid.shape)
    for l, c in enumerate(_centers(grid.n, grid.L, terms), start=1):
        vals += 2.0**-l * _profile((x - c) @ direction, grid.L, p, grid.h / 2)
    return GridField(grid, vals[..., None] * v, meta={"kind": "plane_wave"})


def _band_limited_plane_wave(grid: Grid, direction: np.ndarray, v: np.ndarray, p: float, terms: int = 8) -> GridField:
    """Trigonometric-polynomial smoothing of the plane-wave sum, resolvable on ``grid``."""
    M = int((grid.N // 2 - 1) // np.abs(direction).max())
    fine = 16 * grid.N
    t = -grid.L + 2 * grid.L * np.arange(fine) / fine
    coef = np.fft.fft(_profile(t, grid.L, p, grid.h / 2)) / fine
    m = np.fft.fftfreq(fine, d=1.0 / fine)
    keep = np.abs(m) <= M
    sigma = 2 * grid.L / M
    damp = np.exp(-0.5 * (sigma * np.pi * m / grid.L) ** 2)
    x = grid.coords()
    vals = np.zeros(grid.shape)
    for l, c in enumerate(_centers(grid.n, grid.L, terms), start=1):
        tt = (x - c) @ direction + grid.L
        phase = np.exp(1j * np.pi * np.multiply.outer(tt, m[keep]) / grid.L)
        vals += 2.0**-l * (phase @ (coef[keep] * damp[keep])).real
    return GridField(grid, vals[..., None] * v, meta={"kind": "plane_wave_smoothed"})


def planewave_witness(op: Operator, N: int | None = None, L: float = np.pi, levels: int = 3) -> PlaneWaveResult:
    """Plane-wave superposition along a null direction of a non-elliptic operator.

    Returns the null pair ``(xi, v)``, the clipped field, the spectral
    residual of ``A`` on a band-limited smoothing and the subbox ``L^p``
    norms over ``levels`` successive doublings of the resolution.
    """
    rep = ellipticity(op)
    if rep.verdict != CERTIFIED_NO:
        raise RefusedError(f"{op.name}: no null direction ({rep.verdict}, margin {rep.margin:.3e})")
    if op.n < 2:
        raise NotApplicableError("plane-wave witnesses need n >= 2")
    xi = np.array(rep.witness_xi)
    v = np.array(rep.witness_v)
    null = float(np.linalg.norm(symbols(op, xi[None, :])[0] @ v))
    if null > 1e-10:
        raise RuntimeError(f"null pair check failed: |A[xi] v| = {null:.3e}")
    p = op.n / (op.n - 1)
    N = N or {2: 256, 3: 32}.get(op.n, 16)
    direction = _integer_direction(xi)
    grid = Grid(op.n, L, N)
    smooth = _band_limited_plane_wave(grid, direction, v, p)
    au = apply_operator_spectral(op, smooth)
    dk = derivatives_spectral(smooth, op.k)
    residual = float(au.magnitude().max() / max(dk.magnitude().max(), 1e-300))
    norms, res = [], []
    for lvl in range(levels):
        g = Grid(op.n, L, N * 2**lvl)
        f = plane_wave_field(g, direction, v, p)
        box = np.all(np.abs(g.coords() - _centers(op.n, L, 1)[0]) <= L / 4, axis=-1)
        norms.append(lp_norm(f.magnitude(), p, g.cell_volume, box))
        res.append(g.N)
    diverges = bool(np.all(np.diff(norms) > 0) and norms[-1] / norms[0] >= 1.05)
    field0 = plane_wave_field(grid, direction, v, p)
    return PlaneWaveResult(
        [float(c) for c in xi], [float(c) for c in v], field0, direction.tolist(), residual, norms, res, diverges, p
    )
