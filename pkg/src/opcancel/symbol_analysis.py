"""Ellipticity, cancellation and weak cancellation of operator symbols.

The decisions here are numeric wherever a sphere is involved (sampling,
quadrature) and exact wherever polynomial identities are involved (the
annihilator).  Every numeric verdict carries the margin or threshold it was
decided against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from . import polynomial as pm
from .operator import Operator, monomial_values, monomials, symbol, symbols
from .sphere import (
    SphereRule,
    axis_directions,
    coarser_order,
    cube_sphere_net,
    halton_net,
    net_size,
    random_directions,
    sphere_rule,
)

NULL_TOL = 1e-10
SINGULAR_RTOL = 1e-12
SUBSPACE_TOL = 1e-8
WC_FLOOR = 1e-8
WC_QUAD_FACTOR = 10.0

CERTIFIED_YES = "certified-yes"
CERTIFIED_NO = "certified-no"
INCONCLUSIVE = "inconclusive"


class NonEllipticError(ValueError):
    def __init__(self, message: str, xi=None):
        super().__init__(message)
        self.xi = None if xi is None else [float(x) for x in xi]


class NotApplicableError(ValueError):
    pass


class RefusedError(ValueError):
    pass


# --------------------------------------------------------------------------- subspaces


@dataclass(frozen=True)
class Subspace:
    ambient_dim: int
    basis: np.ndarray  # (ambient_dim, dim), orthonormal columns
    info: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def distance(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(np.linalg.norm(w - self.projector @ w))

    def contains(self, w, tol: float = SUBSPACE_TOL) -> bool:
        return self.distance(w) <= tol * max(1.0, float(np.linalg.norm(w)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "basis": self.basis.T.tolist(), **self.info}


def canonical_basis(basis: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of ``span(basis)`` via pivoted QR of the projector."""
    d = basis.shape[1]
    if d == 0:
        return basis.copy()
    proj = basis @ basis.T
    q, r, _ = scipy.linalg.qr(proj, pivoting=True)
    q = q[:, :d] * np.sign(np.where(np.diag(r)[:d] == 0, 1.0, np.diag(r)[:d]))
    return q


def image_basis(mat: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((mat.shape[0], 0))
    return u[:, s > rtol * s[0]]


def intersect(q: np.ndarray, u: np.ndarray, tol: float = SUBSPACE_TOL) -> np.ndarray:
    """Orthonormal basis of ``span(q) & span(u)`` for orthonormal inputs."""
    if q.shape[1] == 0:
        return q
    resid = q - u @ (u.T @ q)
    _, s, vt = np.linalg.svd(resid, full_matrices=True)
    s = np.concatenate([s, np.zeros(vt.shape[0] - s.size)])
    keep = vt[s <= tol]
    return q @ keep.T


# --------------------------------------------------------------------------- ellipticity


@dataclass
class EllipticityReport:
    verdict: str
    margin: float
    witness_xi: list
    lipschitz_bound: float
    covering_radius: float
    witness_v: Optional[list] = None
    resolution: int = 0
    samples: int = 0

    @property
    def elliptic(self) -> bool:
        return self.verdict == CERTIFIED_YES

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "margin": self.margin,
            "witness": self.witness_xi,
            "witness_v": self.witness_v,
            "lipschitz_bound": self.lipschitz_bound,
            "covering_radius": self.covering_radius,
            "resolution": self.resolution,
            "samples": self.samples,
        }


def sigma_min(op: Operator, xis: np.ndarray, chunk: int = 50_000) -> np.ndarray:
    """Smallest singular value of ``A[xi]`` (as a map on ``V``) for each row of ``xis``."""
    out = np.empty(xis.shape[0])
    for start in range(0, xis.shape[0], chunk):
        mats = symbols(op, xis[start : start + chunk])
        s = np.linalg.svd(mats, compute_uv=False)
        if op.dim_v > op.dim_w:
            out[start : start + chunk] = 0.0
        else:
            out[start : start + chunk] = s[:, -1]
    return out


def _null_vector(op: Operator, xi: np.ndarray) -> tuple[np.ndarray, float]:
    mat = symbol(op, xi)
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    v = vt[-1]
    return v, float(np.linalg.norm(mat @ v))


def _refine_null(op: Operator, starts: np.ndarray) -> tuple[np.ndarray, float]:
    def f(y):
        r = np.linalg.norm(y)
        if r == 0:
            return 1e300
        return float(sigma_min(op, (y / r)[None, :])[0])

    best_xi, best = None, np.inf
    for x0 in starts:
        res = minimize(f, x0, method="Nelder-Mead", options={"xatol": 1e-15, "fatol": 1e-18, "maxiter": 4000})
        xi = res.x / np.linalg.norm(res.x)
        val = f(xi)
        if val < best:
            best_xi, best = xi, val
    return best_xi, best


def _certified_no(op, xi, margin, lip, radius, m, samples) -> EllipticityReport:
    v, resid = _null_vector(op, xi)
    return EllipticityReport(
        CERTIFIED_NO, margin, [float(x) for x in xi], lip, radius, [float(x) for x in v], m, samples
    )


def ellipticity(
    op: Operator, sample_resolution: int = 8, seed: int = 0, max_points: int = 250_000
) -> EllipticityReport:
    """Certify injectivity of ``A[xi]`` on the sphere, refute it, or report inconclusive.

    The sphere is covered by a cube-sphere net whose resolution doubles until
    ``min sigma_min > lipschitz_bound * covering_radius`` or the point budget
    is exhausted.  Seeded random directions are added to search for null
    directions; they never enter the positive certificate.
    """
    n = op.n
    lip = op.lipschitz_bound()
    if op.dim_v > op.dim_w:
        xi = np.eye(n)[0]
        return _certified_no(op, xi, 0.0, lip, 0.0, 0, 0)

    rng = np.random.default_rng(seed)
    extra = np.concatenate([axis_directions(n), random_directions(n, 64 * n, rng)])
    s_extra = sigma_min(op, extra)
    m = max(1, sample_resolution)
    while True:
        net, radius = cube_sphere_net(n, m)
        s_net = sigma_min(op, net)
        pts = np.concatenate([net, extra])
        vals = np.concatenate([s_net, s_extra])
        i = int(np.argmin(vals))
        margin = float(vals[i])
        if margin <= NULL_TOL:
            return _certified_no(op, pts[i], margin, lip, radius, m, len(pts))
        if float(s_net.min()) > lip * radius:
            return EllipticityReport(
                CERTIFIED_YES, margin, [float(x) for x in pts[i]], lip, radius, None, m, len(pts)
            )
        if n == 1 or net_size(n, 2 * m) > max_points:
            break
        m *= 2

    order = np.argsort(vals)[:5]
    xi, val = _refine_null(op, pts[order])
    if val <= NULL_TOL:
        return _certified_no(op, xi, val, lip, radius, m, len(pts))
    return EllipticityReport(INCONCLUSIVE, margin, [float(x) for x in pts[i]], lip, radius, None, m, len(pts))


# --------------------------------------------------------------------------- pseudoinverse


def pseudoinverse_symbol(op: Operator, xi) -> np.ndarray:
    """``A^dagger[xi] = (A*[xi] A[xi])^{-1} A*[xi]``, and 0 at ``xi = 0``."""
    xi = np.asarray(xi, dtype=float)
    return pseudoinverses(op, xi[None, :])[0]


def pseudoinverses(op: Operator, xis: np.ndarray, chunk: int = 100_000) -> np.ndarray:
    """Stacked pseudoinverses, shape ``(M, dim_v, dim_w)``.

    Raises :class:`NonEllipticError` at the first nonzero ``xi`` where the
    symbol is not injective.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    out = np.zeros((xis.shape[0], op.dim_v, op.dim_w))
    if op.dim_v > op.dim_w:
        raise NonEllipticError("symbol cannot be injective: dimV > dimW", xis[0])
    for start in range(0, xis.shape[0], chunk):
        block = xis[start : start + chunk]
        nz = np.any(block != 0, axis=1)
        if not nz.any():
            continue
        mats = symbols(op, block[nz])
        u, s, vt = np.linalg.svd(mats, full_matrices=False)
        bad = s[:, -1] <= SINGULAR_RTOL * s[:, 0]
        if bad.any():
            xi = block[nz][np.argmax(bad)]
            raise NonEllipticError(f"symbol is not injective at xi={xi.tolist()} (non-elliptic direction)", xi)
        pinv = np.einsum("mji,mj,mkj->mik", vt, 1.0 / s, u)
        sub = out[start : start + chunk]
        sub[nz] = pinv
    return out


def pseudoinverse_apply(
    op: Operator, xis: np.ndarray, w: np.ndarray, chunk: int = 100_000
) -> tuple[np.ndarray, float]:
    """``A^dagger[xi] w`` for every row of ``xis`` and ``max |A[xi] A^dagger[xi] w - w|`` over ``xi != 0``.

    Works in chunks so that no full ``(M, dim_v, dim_w)`` stack is held.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    out = np.zeros((xis.shape[0], op.dim_v))
    resid = 0.0
    for start in range(0, xis.shape[0], chunk):
        block = xis[start : start + chunk]
        y = pseudoinverses(op, block) @ w
        out[start : start + chunk] = y
        nz = np.any(block != 0, axis=1)
        if nz.any():
            back = np.einsum("qwv,qv->qw", symbols(op, block[nz]), y[nz])
            resid = max(resid, float(np.linalg.norm(back - w, axis=1).max()))
    return out, resid


# --------------------------------------------------------------------------- cancellation


def image_intersection(
    op: Operator, seed: int = 0, stabilization_window: int | None = None, tol: float = SUBSPACE_TOL
) -> Subspace:
    """The subspace ``J`` of ``W`` contained in ``im A[xi]`` for every unit ``xi``.

    Intersects images along seeded random directions until the dimension has
    not dropped for ``stabilization_window`` (default ``2n``) consecutive
    steps, then sweeps a deterministic net (coordinate axes, pairwise
    diagonals and ``4**n`` Halton points).
    """
    n = op.n
    window = stabilization_window or 2 * n
    rng = np.random.default_rng(seed)
    q = np.eye(op.dim_w)
    stable = steps = 0
    while q.shape[1] and stable < window and steps < 100 * window:
        xi = random_directions(n, 1, rng)[0]
        new = intersect(q, image_basis(symbol(op, xi)), tol)
        stable = 0 if new.shape[1] < q.shape[1] else stable + 1
        q = new
        steps += 1
    net = np.concatenate([axis_directions(n), halton_net(n, 4**n)])
    for xi in net:
        if not q.shape[1]:
            break
        q = intersect(q, image_basis(symbol(op, xi)), tol)
    info = {"random_steps": steps, "verification_net": int(net.shape[0]), "seed": seed}
    return Subspace(op.dim_w, canonical_basis(q), info)


def canceling(op: Operator, seed: int = 0) -> bool:
    return image_intersection(op, seed=seed).dim == 0


# --------------------------------------------------------------------------- condition (WC)


@dataclass
class WCMatrix:
    L: np.ndarray  # (dim_v * #monomials(k - n), dim_w)
    quadrature_error: float
    scheme: dict
    row_labels: list[str]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.L, 2)) if self.L.size else 0.0

    def to_dict(self) -> dict:
        return {
            "L": self.L.tolist(),
            "rows": self.row_labels,
            "quadrature_error": self.quadrature_error,
            "scheme": self.scheme,
        }


def _row_labels(op: Operator) -> list[str]:
    betas = monomials(op.n, op.k - op.n)
    return [f"v{v + 1}*xi^{list(b)}" for v in range(op.dim_v) for b in betas]


def sphere_moment(op: Operator, rule: SphereRule, per_node: bool = False) -> np.ndarray:
    """``sum_q w_q A^dagger[xi_q] (x) xi_q^beta`` flattened to ``(dim_v * nbeta, dim_w)``."""
    betas = monomials(op.n, op.k - op.n)
    pinv = pseudoinverses(op, rule.nodes)
    mono = monomial_values(rule.nodes, betas)
    if per_node:
        vals = np.einsum("qb,qvw->qvbw", mono, pinv)
        return vals.reshape(len(rule.weights), op.dim_v * len(betas), op.dim_w)
    return np.einsum("q,qb,qvw->vbw", rule.weights, mono, pinv).reshape(op.dim_v * len(betas), op.dim_w)


def wc_matrix(op: Operator, quad_order: int | None = None, force_quadrature: bool = False, seed: int = 0) -> WCMatrix:
    """The sphere integral of ``A^dagger[xi] w (x)^{k-n} xi`` as a matrix on ``W``.

    For odd ``n`` the integrand is odd, so the exact zero is returned unless
    ``force_quadrature`` is set.
    """
    n, k = op.n, op.k
    if k < n:
        raise NotApplicableError(f"WC not applicable: k < n (k={k}, n={n})")
    labels = _row_labels(op)
    rows = len(labels)
    if n % 2 == 1 and not force_quadrature:
        return WCMatrix(np.zeros((rows, op.dim_w)), 0.0, {"kind": "parity", "reason": "n odd"}, labels)
    rule = sphere_rule(n, quad_order, seed)
    if rule.batches is not None:
        per = sphere_moment(op, rule, per_node=True) * rule.weights[:, None, None]
        L = per.sum(axis=0)
        nb = int(rule.batches.max()) + 1
        means = np.stack([per[rule.batches == b].sum(axis=0) * nb for b in range(nb)])
        err = float(np.linalg.norm(means.std(axis=0, ddof=1), 2) / np.sqrt(nb))
    else:
        L = sphere_moment(op, rule)
        if n == 1:
            err = 0.0
        else:
            coarse = sphere_moment(op, sphere_rule(n, coarser_order(n, quad_order), seed))
            err = float(np.linalg.norm(L - coarse, 2))
    return WCMatrix(L, err, rule.scheme, labels)


@dataclass
class WCResult:
    verdict: str  # "holds" | "fails" | "inconclusive"
    norm_on_J: float
    threshold: float
    dim_J: int
    L: WCMatrix

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"


def wc_threshold(quadrature_error: float, floor: float = WC_FLOOR) -> float:
    return max(floor, WC_QUAD_FACTOR * quadrature_error)


def wc_test(
    op: Operator,
    J: Subspace | None = None,
    L: WCMatrix | None = None,
    quad_order: int | None = None,
    seed: int = 0,
    floor: float = WC_FLOOR,
) -> WCResult:
    """Decide condition (WC): ``L`` vanishes on ``J``.

    The threshold is ``max(floor, 10 * quadrature_error)``.
    """
    if L is None:
        L = wc_matrix(op, quad_order, seed=seed)
    if J is None:
        J = image_intersection(op, seed=seed)
    norm = float(np.linalg.norm(L.L @ J.basis, 2)) if J.dim else 0.0
    thr = wc_threshold(L.quadrature_error, floor)
    if norm > thr:
        verdict = "fails"
    elif L.scheme.get("kind") == "sobol" and L.quadrature_error > floor and J.dim:
        verdict = "inconclusive"
    else:
        verdict = "holds"
    return WCResult(verdict, norm, thr, J.dim, L)


# --------------------------------------------------------------------------- annihilator


def annihilator(op: Operator, check_ellipticity: bool = True) -> pm.PolyMatrix:
    """Exact annihilator ``det(D[xi]) (Id - A[xi] D[xi]^{-1} A*[xi])`` with ``D = A* A``.

    Computed as ``det(D) Id - A adj(D) A*`` so no division occurs.  Float
    coefficients are converted to rationals exactly.  The result satisfies
    ``annihilator @ A == 0`` identically; this is checked before returning.
    """
    if check_ellipticity:
        rep = ellipticity(op)
        if rep.verdict == CERTIFIED_NO:
            raise NonEllipticError(
                f"{op.name} is not elliptic (null direction xi={rep.witness_xi}); "
                "the projector formula degenerates",
                rep.witness_xi,
            )
    sym = pm.from_operator_symbol(op)
    st = pm.transpose(sym.rows)
    gram = pm.matmul(st, sym.rows)
    det = pm.bareiss_det(gram)
    if det.is_zero():
        raise NonEllipticError(f"{op.name}: det(A*A) vanishes identically")
    adj = pm.adjugate(gram)
    proj = pm.matmul(pm.matmul(sym.rows, adj), st)
    rows = pm.subtract(pm.scale(pm.identity(op.dim_w, op.n), det), proj)
    deg = 2 * op.k * op.dim_v
    ann = pm.PolyMatrix(rows, deg)
    if not ann.is_homogeneous():
        raise ArithmeticError("annihilator entries are not homogeneous of degree 2k*dimV")
    if not (ann @ sym).is_zero():
        raise ArithmeticError("annihilator identity failed")
    ann.note = "square elliptic: trivial annihilator" if ann.is_zero() else ""
    ann.det = det
    return ann


# --------------------------------------------------------------------------- certificate


@dataclass
class WCCertificate:
    annihilator_order: int
    basis: np.ndarray  # (dim_w, r) orthonormal basis of im L*
    K_alpha: dict  # alpha -> (r, dim_w) coordinates in `basis`
    residual: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "annihilator_order": self.annihilator_order,
            "im_Lstar_dim": int(self.basis.shape[1]),
            "im_Lstar_basis": self.basis.T.tolist(),
            "K_alpha": [{"alpha": list(a), "matrix": m.tolist()} for a, m in self.K_alpha.items()],
            "residual": self.residual,
            "note": self.note,
        }


def wc_certificate(op: Operator, wc: WCResult | None = None, ann: pm.PolyMatrix | None = None) -> WCCertificate:
    """Left inverse maps ``K_alpha`` with ``sum K_alpha ann_alpha = id`` on ``im L*``."""
    if wc is None:
        wc = wc_test(op)
    if not wc.holds:
        raise RefusedError(f"WC {wc.verdict} for {op.name} (norm on J = {wc.norm_on_J:.3e}); no certificate")
    L = wc.L.L
    order = 2 * op.k * op.dim_v
    s_tol = wc_threshold(wc.L.quadrature_error)
    u, s, _ = np.linalg.svd(L.T, full_matrices=False)
    basis = u[:, s > s_tol]
    if basis.shape[1] == 0:
        return WCCertificate(order, basis, {}, 0.0, "L vanishes: im L* = {0}, trivial certificate")
    basis = canonical_basis(basis)
    if ann is None:
        ann = annihilator(op, check_ellipticity=False)
    if ann.is_zero():
        raise RefusedError("annihilator is trivial but im L* is not; WC cannot hold")
    alphas = ann.exponents()
    T = np.concatenate([ann.coefficient(a) for a in alphas], axis=0)
    TB = T @ basis
    sv = np.linalg.svd(TB, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise RefusedError("T restricted to im L* is not injective")
    left = np.linalg.pinv(TB)
    w = op.dim_w
    K = {a: left[:, i * w : (i + 1) * w] for i, a in enumerate(alphas)}
    recon = sum(basis @ K[a] @ ann.coefficient(a) @ basis for a in alphas)
    resid = float(np.max(np.linalg.norm(recon - basis, axis=0)))
    return WCCertificate(order, basis, K, resid)


# --------------------------------------------------------------------------- orchestration


@dataclass
class AnalysisConfig:
    seed: int = 0
    sample_resolution: int = 8
    quad_order: Optional[int] = None
    stabilization_window: Optional[int] = None
    certificate: bool = True
    wc_floor: float = WC_FLOOR


@dataclass
class AnalysisReport:
    operator: str
    ellipticity: Optional[EllipticityReport]
    J: Optional[Subspace]
    canceling: Optional[bool]
    wc_applicable: bool
    wc: Optional[WCResult] = None
    certificate: Optional[WCCertificate] = None
    notes: list = field(default_factory=list)
    dims: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        wc = {"applicable": self.wc_applicable}
        if self.wc is not None:
            wc.update(
                verdict=self.wc.verdict,
                norm_on_J=self.wc.norm_on_J,
                threshold=self.wc.threshold,
                L=self.wc.L.L.tolist(),
                L_rows=self.wc.L.row_labels,
                L_norm=self.wc.L.norm,
                quadrature_error=self.wc.L.quadrature_error,
                scheme=self.wc.L.scheme,
            )
        return {
            "operator": self.operator,
            **self.dims,
            "elliptic": None if self.ellipticity is None else self.ellipticity.to_dict(),
            "J": None if self.J is None else self.J.to_dict(),
            "canceling": self.canceling,
            "wc": wc,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "notes": list(self.notes),
        }


def analyze(op: Operator, config: AnalysisConfig | None = None) -> AnalysisReport:
    """Run every applicable decision for ``op``; failures become notes, not exceptions."""
    cfg = config or AnalysisConfig()
    report = AnalysisReport(
        op.name, None, None, None, op.k >= op.n, dims={"n": op.n, "k": op.k, "dimV": op.dim_v, "dimW": op.dim_w}
    )
    try:
        report.ellipticity = ellipticity(op, cfg.sample_resolution, cfg.seed)
    except Exception as exc:  # noqa: BLE001 - partial report by design
        report.notes.append(f"ellipticity: {exc}")
    try:
        report.J = image_intersection(op, cfg.seed, cfg.stabilization_window)
        report.canceling = report.J.dim == 0
    except Exception as exc:  # noqa: BLE001
        report.notes.append(f"image_intersection: {exc}")
    if not report.wc_applicable:
        report.notes.append("WC not applicable: k < n")
        return report
    ell = report.ellipticity
    if ell is None or ell.verdict == CERTIFIED_NO:
        report.notes.append("WC not evaluated: operator is not elliptic")
        return report
    if ell.verdict == INCONCLUSIVE:
        report.notes.append("ellipticity inconclusive; WC evaluated on the sampled assumption of ellipticity")
    try:
        report.wc = wc_test(op, report.J, wc_matrix(op, cfg.quad_order, seed=cfg.seed), floor=cfg.wc_floor)
    except Exception as exc:  # noqa: BLE001
        report.notes.append(f"wc: {exc}")
        return report
    if cfg.certificate and report.wc.holds:
        try:
            report.certificate = wc_certificate(op, report.wc)
            if report.certificate.note:
                report.notes.append(report.certificate.note)
        except Exception as exc:  # noqa: BLE001
            report.notes.append(f"certificate: {exc}")
    return report
