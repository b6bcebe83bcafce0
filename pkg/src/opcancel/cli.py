"""Command-line interface.

Usage examples::

    opcancel analyze builtin:A1 --json
    opcancel probe blowup builtin:laplacian_power_2_1 --w 1 --eps 1/8:1/256
    opcancel gallery --out gallery.json

Exit codes: 0 when the computation completed (whatever the verdicts), 1 on
usage or input errors, 2 when a computation is refused as not applicable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import __version__
from .grid import atomic_write
from .kernels import (
    check_derivative_order,
    decompose_log,
    fundamental_witness,
    homogeneity_check,
    radial_trend,
    synthesize_kernel,
)
from .lorentz import LorentzSpec
from .operator import Operator, OperatorFormatError, load_operator, to_dict
from .probes import (
    ProbeResult,
    mollified_blowup_probe,
    planewave_witness,
    ratio_probe,
    taylor_scan,
)
from .registry import GALLERY, UnknownOperatorError, builtin
from .symbol_analysis import (
    CERTIFIED_NO,
    CERTIFIED_YES,
    WC_FLOOR,
    AnalysisConfig,
    NonEllipticError,
    NotApplicableError,
    RefusedError,
    analyze,
    annihilator,
    image_intersection,
    wc_certificate,
    wc_matrix,
    wc_test,
)

EXIT_OK, EXIT_USAGE, EXIT_REFUSED = 0, 1, 2


class UsageError(argparse.ArgumentTypeError):
    """Invalid input; raised from argument parsers and verbs alike."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- argument parsing


def parse_real(text: str) -> float:
    """Parse ``3.5``, ``1/8``, ``pi``, ``2pi``, ``pi/2`` or ``inf``."""
    t = text.strip().lower().replace("*", "").replace(" ", "")
    if t in ("inf", "infinity", "+inf"):
        return math.inf

    def atom(s: str) -> float:
        if s.endswith("pi"):
            head = s[:-2]
            return (float(Fraction(head)) if head else 1.0) * math.pi
        return float(Fraction(s))

    try:
        num, _, den = t.partition("/")
        value = atom(num) / (atom(den) if den else 1.0)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"cannot parse number {text!r}") from exc
    if not math.isfinite(value):
        raise UsageError(f"cannot parse number {text!r}")
    return value


def parse_vector(text: str) -> np.ndarray:
    return np.array([parse_real(c) for c in text.split(",") if c.strip()])


def parse_eps(text: str) -> list[float]:
    """``A:B`` (factor 2) or ``A:B:F``: geometric sequence from ``A`` down to ``B``."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"--eps expects A:B or A:B:FACTOR, got {text!r}")
    a, b = parse_real(parts[0]), parse_real(parts[1])
    f = parse_real(parts[2]) if len(parts) == 3 else 2.0
    if not (a > b > 0) or f <= 1:
        raise UsageError(f"--eps needs A > B > 0 and FACTOR > 1, got {text!r}")
    steps = math.log(a / b) / math.log(f)
    m = round(steps)
    if abs(steps - m) > 1e-9:
        raise UsageError(f"--eps: A/B = {a / b:g} is not a power of the factor {f:g}")
    if m < 2:
        raise UsageError("--eps must span at least 3 values")
    return [a / f**j for j in range(m + 1)]


def load_source(source: str) -> Operator:
    if source.startswith("builtin:"):
        return builtin(source[len("builtin:") :])
    try:
        return load_operator(source)
    except FileNotFoundError as exc:
        raise UsageError(f"operator file {source!r} not found; use builtin:NAME for registry operators") from exc
    except OSError as exc:
        raise UsageError(f"cannot read operator file {source!r}: {exc.strerror or exc}") from exc


# --------------------------------------------------------------------------- report helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def dumps(report: dict) -> str:
    """Deterministic JSON text: sorted keys, non-finite floats as strings."""
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def _yes_no(flag) -> str:
    return "n/a" if flag is None else ("yes" if flag else "no")


def _elliptic_word(verdict: str) -> str:
    return {CERTIFIED_YES: "yes", CERTIFIED_NO: "no"}.get(verdict, "inconclusive")


def analysis_summary(rep) -> dict:
    ell = None if rep.ellipticity is None else _elliptic_word(rep.ellipticity.verdict)
    canceling = None if rep.canceling is None else _yes_no(rep.canceling)
    if rep.wc is None:
        wc = "n/a"
        lnz = None
    else:
        wc = {"holds": "yes", "fails": "no"}.get(rep.wc.verdict, "inconclusive")
        lnz = bool(rep.wc.L.norm > rep.wc.threshold)
    return {"elliptic": ell, "canceling": canceling, "wc": wc, "L_nonzero": lnz}


def _config(args) -> AnalysisConfig:
    return AnalysisConfig(
        seed=args.seed,
        quad_order=args.quad_order,
        wc_floor=WC_FLOOR if args.tol is None else args.tol,
    )


# --------------------------------------------------------------------------- verbs


def cmd_analyze(args) -> tuple[dict, list[str]]:
    op = load_source(args.source)
    if args.wc and op.k < op.n:
        raise NotApplicableError(f"WC not applicable: k < n (k={op.k}, n={op.n})")
    rep = analyze(op, _config(args))
    out = {"command": "analyze", "operator_definition": to_dict(op), "report": rep.to_dict()}
    out["summary"] = analysis_summary(rep)
    s = out["summary"]
    lines = [
        f"operator   {op.name} (n={op.n}, k={op.k}, dimV={op.dim_v}, dimW={op.dim_w})",
        f"elliptic   {s['elliptic']}",
        f"canceling  {s['canceling']}" + ("" if rep.J is None else f" (dim J = {rep.J.dim})"),
        f"WC         {s['wc']}" + ("" if rep.wc is None else f" (|L on J| = {rep.wc.norm_on_J:.3e})"),
    ]
    lines += [f"note       {n}" for n in rep.notes]
    return out, lines


def cmd_kernel(args) -> tuple[dict, list[str]]:
    op = load_source(args.source)
    N = args.grid or (256 if op.n <= 2 else 128)
    L = args.box or math.pi
    l = args.l if args.l is not None else max(0, op.k - op.n)
    check_derivative_order(op, l)
    bundle = synthesize_kernel(op, l, N, L)
    out = {
        "command": "kernel",
        "operator": op.name,
        "l": l,
        "N": N,
        "L": L,
        "expected_homogeneity": bundle.expected_homogeneity,
        "smoothing": bundle.field.meta.get("smoothing", 0.0),
        "row_labels": bundle.row_labels,
        "radial_trend": radial_trend(bundle),
    }
    lines = [f"kernel     D^{l} K for {op.name}, homogeneity {bundle.expected_homogeneity}, N={N}, L={L:g}"]
    logarithmic = bundle.log_part is not None and np.abs(bundle.log_part).max() > 1e-8
    if logarithmic:
        dec = decompose_log(bundle)
        out["log_decomposition"] = {
            "log_constant": dec.log_constant,
            "L": dec.L,
            "residual_deviation": dec.residual_deviation,
        }
        lines.append(f"log part   c_n = {dec.log_constant:.6g}, residual deviation {dec.residual_deviation:.3e}")
    else:
        dev = homogeneity_check(bundle)
        out["homogeneity_deviation"] = dev
        lines.append(f"deviation  {dev:.3e} (scaling by 2 on the annulus [4h, L/8])")
    field = bundle.field
    if args.w is not None:
        wit = fundamental_witness(op, args.w, N, L, seed=args.seed)
        out["witness"] = {"w": wit.w, "J": wit.J.to_dict(), "projection_residual": wit.residual}
        field = wit.field
        lines.append(f"witness    A u = delta_0 w for w={wit.w.tolist()}, residual {wit.residual:.2e}")
    if args.field:
        field.save(args.field)
    if args.csv:
        atomic_write(args.csv, field.csv_slice(0))
    return out, lines


def _probe_lines(res) -> list[str]:
    lines = [f"probe      {res.kind} on {res.inputs.get('operator')}: verdict {res.verdict}"]
    if res.slope is not None:
        lines.append(f"fit        slope {res.slope:.6g}, R^2 {res.r2:.6f}")
    if res.expectation is not None:
        lines.append(f"expected   {res.expectation} (agrees: {_yes_no(res.agrees)})")
    return lines


def _expected_blowup(op, J, args) -> str | None:
    try:
        wc = wc_test(op, J, wc_matrix(op, args.quad_order, seed=args.seed), seed=args.seed)
    except NotApplicableError:
        return None
    return {"holds": "bounded", "fails": "grows"}.get(wc.verdict)


def _default_w(op, J, args) -> np.ndarray:
    if args.w is not None:
        return args.w
    if J.dim == 0:
        raise RefusedError(f"{op.name} is canceling (J = {{0}}); there is no w to probe")
    return J.basis[:, 0]


def probe_blowup(args, op) -> tuple[dict, list[str], ProbeResult | None]:
    J = image_intersection(op, seed=args.seed)
    w = _default_w(op, J, args)
    expected = _expected_blowup(op, J, args) if op.k >= op.n else None
    res = mollified_blowup_probe(op, w, args.eps, args.grid, args.box, J, args.seed, expected)
    return res.to_dict(), _probe_lines(res) + [
        f"Au L1      max relative deviation from |w|: {res.extras['Au_L1_max_rel_dev']:.2e}"
    ], res


def probe_ratio(args, op) -> tuple[dict, list[str], ProbeResult | None]:
    j = args.j if args.j is not None else min(op.k, op.n)
    res = ratio_probe(op, j, args.count, args.seed, args.grid or 128, args.box or math.pi, args.eps)
    lines = _probe_lines(res) + [f"spread     max/median {res.extras['max_over_median']:.4g}"]
    if "mollified" in res.extras:
        m = res.extras["mollified"]
        lines.append(f"mollified  norm^2 vs log(1/eps): {m['verdict']} (R^2 {m['r2']:.4f})")
    return res.to_dict(), lines, res


def probe_taylor(args, op) -> tuple[dict, list[str], ProbeResult | None]:
    J = image_intersection(op, seed=args.seed)
    w = _default_w(op, J, args)
    N = args.grid or (256 if op.n <= 2 else 128)
    L = args.box or math.pi
    wit = fundamental_witness(op, w, N, L, J, args.seed)
    grid = wit.field.grid
    h = grid.h
    if args.x is not None:
        x = args.x
    else:
        x = np.zeros(op.n)
        x[0] = round(grid.L / 4 / h) * h
    dist = float(np.linalg.norm(x))
    top = min(grid.L / 4, dist / 2) if dist > 0 else grid.L / 4
    radii = [r for r in (4 * h * 2 ** (i / 2) for i in range(8)) if r <= top * (1 + 1e-12)]
    if len(radii) < 2:
        raise UsageError(f"base point {x.tolist()} leaves no room for radii in [4h, min(L/4, |x|/2)]")
    p = args.p if args.p is not None else 2.0
    q = args.q if args.q is not None else p
    scan = taylor_scan(wit.field, x, args.order, LorentzSpec(p, q), radii)
    out = {"kind": "taylor", "operator": op.name, "w": w, "N": N, "L": L, "scan": scan.to_dict()}
    lines = [
        f"probe      taylor scan of the witness for {op.name} at x={np.round(x, 6).tolist()}, order {args.order}",
        f"fit        decay exponent {scan.exponent:.4f}, R^2 {scan.r2:.6f}",
    ]
    return out, lines, None


def probe_planewave(args, op) -> tuple[dict, list[str], ProbeResult | None]:
    res = planewave_witness(op, args.grid, args.box or math.pi)
    out = {"kind": "planewave", "operator": op.name, **res.to_dict()}
    lines = [
        f"probe      plane wave along xi={np.round(res.xi, 12).tolist()}, v={np.round(res.v, 12).tolist()}",
        f"residual   spectral |Au| / |D^k u| = {res.spectral_residual:.2e}",
        f"L^p norms  {', '.join(f'{v:.4f}' for v in res.subbox_norms)} (diverges: {_yes_no(res.diverges)})",
    ]
    if args.field:
        res.field.save(args.field)
    return out, lines, None


PROBES = {"blowup": probe_blowup, "ratio": probe_ratio, "taylor": probe_taylor, "planewave": probe_planewave}


def cmd_probe(args) -> tuple[dict, list[str]]:
    op = load_source(args.source)
    out, lines, res = PROBES[args.kind](args, op)
    if args.csv:
        if res is None:
            raise UsageError(f"--csv is available for blowup and ratio probes, not {args.kind}")
        atomic_write(args.csv, res.to_csv())
    return {"command": "probe", **out}, lines


def cmd_annihilator(args) -> tuple[dict, list[str]]:
    op = load_source(args.source)
    ann = annihilator(op)
    out = {
        "command": "annihilator",
        "operator": op.name,
        "degree": ann.degree,
        "shape": list(ann.shape),
        "entries": ann.to_strings(),
        "det_gram": str(ann.det),
        "identity_verified": True,
        "trivial": ann.is_zero(),
        "note": ann.note,
    }
    lines = [f"annihilator {ann.shape[0]}x{ann.shape[1]}, degree {ann.degree}; annihilator * A = 0 verified exactly"]
    if ann.note:
        lines.append(f"note       {ann.note}")
    return out, lines


def cmd_certify(args) -> tuple[dict, list[str]]:
    op = load_source(args.source)
    if op.k < op.n:
        raise NotApplicableError(f"WC not applicable: k < n (k={op.k}, n={op.n})")
    floor = WC_FLOOR if args.tol is None else args.tol
    wc = wc_test(op, image_intersection(op, seed=args.seed), wc_matrix(op, args.quad_order, seed=args.seed), floor=floor)
    cert = wc_certificate(op, wc)
    out = {"command": "certify", "operator": op.name, "wc_verdict": wc.verdict, "certificate": cert.to_dict()}
    lines = [f"certificate for {op.name}: dim im L* = {cert.basis.shape[1]}, residual {cert.residual:.2e}"]
    if cert.note:
        lines.append(f"note       {cert.note}")
    return out, lines


def gallery_rows(seed: int = 0, quad_order: int | None = None) -> list[dict]:
    rows = []
    for name, expected in GALLERY:
        rep = analyze(builtin(name), AnalysisConfig(seed=seed, quad_order=quad_order, certificate=False))
        s = analysis_summary(rep)
        got = {"elliptic": s["elliptic"] == "yes"}
        if "canceling" in expected:
            got["canceling"] = s["canceling"] == "yes"
        if "wc" in expected:
            got["wc"] = None if s["wc"] == "n/a" else s["wc"] == "yes"
        if "L_nonzero" in expected:
            got["L_nonzero"] = s["L_nonzero"]
        mismatched = sorted(k for k in expected if got.get(k) != expected[k])
        rows.append({"operator": name, "expected": expected, "computed": got, "summary": s, "match": not mismatched,
                     "mismatched": mismatched})
    return rows


def cmd_gallery(args) -> tuple[dict, list[str]]:
    rows = gallery_rows(args.seed, args.quad_order)
    out = {"command": "gallery", "rows": rows, "all_match": all(r["match"] for r in rows)}
    lines = [f"{'operator':<24}{'elliptic':<14}{'canceling':<11}{'WC':<14}{'L != 0':<8}match"]
    for r in rows:
        s = r["summary"]
        flag = "ok" if r["match"] else "MISMATCH " + ",".join(r["mismatched"])
        lines.append(
            f"{r['operator']:<24}{s['elliptic']:<14}{str(s['canceling']):<11}{s['wc']:<14}"
            f"{_yes_no(s['L_nonzero']):<8}{flag}"
        )
    return out, lines


# --------------------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--out", metavar="PATH", help="write the JSON report to PATH (atomically)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--quad-order", type=int, default=None, metavar="M", help="sphere quadrature order")
    p.add_argument("--tol", type=parse_real, default=None, metavar="T", help=f"WC decision floor (default {WC_FLOOR:g})")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=None, metavar="N", help="points per axis")
    p.add_argument("--box", type=parse_real, default=None, metavar="L", help="box half-width, e.g. pi")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opcancel", description="Symbol analysis and numerical probes for linear differential operators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    src_help = "operator source: builtin:NAME or a JSON operator file"

    p = sub.add_parser("analyze", help="ellipticity, cancellation and WC verdicts")
    p.add_argument("source", help=src_help)
    p.add_argument("--wc", action="store_true", help="require the WC decision (refused when k < n)")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("kernel", help="synthesize D^l K and check homogeneity")
    p.add_argument("source", help=src_help)
    p.add_argument("--l", type=int, default=None, help="derivative order (default max(0, k - n))")
    p.add_argument("--w", type=parse_vector, default=None, metavar="COMPONENTS", help="also build the witness K w")
    p.add_argument("--field", metavar="PATH", help="write the field in binary form")
    p.add_argument("--csv", metavar="PATH", help="write a CSV slice of the field along x1")
    _add_common(p)
    _add_grid(p)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("probe", help="numerical probes")
    p.add_argument("kind", choices=sorted(PROBES))
    p.add_argument("source", help=src_help)
    p.add_argument("--w", type=parse_vector, default=None, metavar="COMPONENTS", help="data vector in J, e.g. 1,0")
    p.add_argument("--eps", type=parse_eps, default=None, metavar="A:B", help="geometric epsilon range, e.g. 1/8:1/256")
    p.add_argument("--j", type=int, default=None, help="ratio probe index j (default min(k, n))")
    p.add_argument("--count", type=int, default=50, help="random fields for the ratio probe (default 50)")
    p.add_argument("--p", type=parse_real, default=None, help="Lorentz exponent p for taylor (default 2)")
    p.add_argument("--q", type=parse_real, default=None, help="Lorentz exponent q for taylor (default p)")
    p.add_argument("--order", type=int, default=1, help="Taylor order k for taylor (default 1)")
    p.add_argument("--x", type=parse_vector, default=None, metavar="POINT", help="Taylor base point (a grid point)")
    p.add_argument("--csv", metavar="PATH", help="write the (parameter, statistic) series as CSV")
    p.add_argument("--field", metavar="PATH", help="write the plane-wave field in binary form")
    _add_common(p)
    _add_grid(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("annihilator", help="exact polynomial annihilator")
    p.add_argument("source", help=src_help)
    _add_common(p)
    p.set_defaults(func=cmd_annihilator)

    p = sub.add_parser("certify", help="WC certificate maps K_alpha")
    p.add_argument("source", help=src_help)
    _add_common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("gallery", help="verdict table over the builtin registry")
    _add_common(p)
    p.set_defaults(func=cmd_gallery)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report, lines = args.func(args)
    except (NotApplicableError, RefusedError, NonEllipticError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (UsageError, UnknownOperatorError, OperatorFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = dumps(report)
    if args.out:
        atomic_write(args.out, text)
    if args.json:
        sys.stdout.write(text)
    else:
        print("\n".join(lines))
    return EXIT_OK


def main() -> None:
    sys.exit(run())
