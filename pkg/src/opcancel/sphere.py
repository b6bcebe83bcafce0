"""Quadrature rules and covering nets on the unit sphere ``S^{n-1}``.

All rules integrate against unnormalized surface measure (counting measure on
``S^0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi, sqrt

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

DEFAULT_ORDER = {2: 512, 3: 128}
QMC_LOG2_POINTS = 15
QMC_BATCHES = 16


def sphere_area(n: int) -> float:
    """Surface measure of ``S^{n-1}``; 2 for ``n = 1``."""
    return 2 * pi ** (n / 2) / gamma(n / 2)


@dataclass(frozen=True)
class SphereRule:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: dict
    batches: np.ndarray | None = None  # batch label per node (quasi-Monte Carlo only)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate node values of shape ``(M, ...)``."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def sphere_rule(n: int, order: int | None = None, seed: int = 0) -> SphereRule:
    """Deterministic rule on ``S^{n-1}``.

    * ``n = 1``: the two points ``+-1``.
    * ``n = 2``: trapezoid in the angle with ``order`` nodes (default 512).
    * ``n = 3``: Gauss-Legendre(``order // 2``) in ``cos(theta)`` times trapezoid(``order``)
      in the azimuth (default 64 x 128).
    * ``n >= 4``: scrambled Sobol points pushed to the sphere, ``2**order`` of them.
    """
    if n == 1:
        return SphereRule(np.array([[1.0], [-1.0]]), np.ones(2), {"kind": "S0", "nodes": 2})
    if n == 2:
        m = order or DEFAULT_ORDER[2]
        theta = 2 * pi * np.arange(m) / m
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return SphereRule(nodes, np.full(m, 2 * pi / m), {"kind": "trapezoid", "nodes": m})
    if n == 3:
        m = order or DEFAULT_ORDER[3]
        t, w = np.polynomial.legendre.leggauss(max(m // 2, 1))
        phi = 2 * pi * np.arange(m) / m
        s = np.sqrt(1 - t**2)
        nodes = np.stack(
            [np.outer(s, np.cos(phi)).ravel(), np.outer(s, np.sin(phi)).ravel(), np.repeat(t, m)], axis=1
        )
        weights = np.repeat(w, m) * (2 * pi / m)
        return SphereRule(nodes, weights, {"kind": "gauss_legendre_x_trapezoid", "gl": len(t), "trapezoid": m})
    log2 = order or QMC_LOG2_POINTS
    sampler = qmc.Sobol(d=n, scramble=True, seed=seed)
    u = sampler.random_base2(log2)
    g = ndtri(np.clip(u, 1e-15, 1 - 1e-15))
    nodes = g / np.linalg.norm(g, axis=1, keepdims=True)
    count = nodes.shape[0]
    weights = np.full(count, sphere_area(n) / count)
    batches = np.arange(count) % QMC_BATCHES
    return SphereRule(nodes, weights, {"kind": "sobol", "points": count, "seed": seed}, batches)


def coarser_order(n: int, order: int | None) -> int:
    if n >= 4:
        return (order or QMC_LOG2_POINTS) - 1
    return (order or DEFAULT_ORDER.get(n, 2)) // 2


def cube_sphere_net(n: int, m: int) -> tuple[np.ndarray, float]:
    """Radial projection of a grid on the faces of ``[-1, 1]^n`` onto the sphere.

    Each face carries ``(m + 1)^(n - 1)`` nodes including cell corners.  Radial
    projection from outside the unit ball is 1-Lipschitz, so the returned
    covering radius ``sqrt(n - 1) / m`` (half a cell diagonal) is rigorous.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    ticks = np.linspace(-1.0, 1.0, m + 1)
    grids = np.meshgrid(*([ticks] * (n - 1)), indexing="ij")
    face = np.stack([g.ravel() for g in grids], axis=1)
    pts = []
    for axis in range(n):
        for sgn in (1.0, -1.0):
            p = np.insert(face, axis, sgn, axis=1)
            pts.append(p)
    pts = np.concatenate(pts)
    pts = np.unique(np.round(pts, 14), axis=0)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, sqrt(n - 1) / m


def net_size(n: int, m: int) -> int:
    return 2 * n * (m + 1) ** (n - 1)


def halton_net(n: int, count: int) -> np.ndarray:
    """Deterministic quasi-uniform points on ``S^{n-1}`` (unscrambled Halton, first point skipped)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    u = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def axis_directions(n: int) -> np.ndarray:
    """Coordinate axes and the diagonals ``(e_i +- e_j)/sqrt(2)``."""
    pts = [np.eye(n)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            for s in (1.0, -1.0):
                v = np.zeros(n)
                v[i], v[j] = 1.0, s
                pts.append(v / sqrt(2))
    return np.array(pts)


def random_directions(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
