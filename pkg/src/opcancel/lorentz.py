"""Decreasing rearrangements and Lorentz norms of grid samples.

A field sampled on cells of volume ``h**n`` is a step function, so its
rearrangement is a step function too and every norm below is evaluated in
closed form from the sorted values and cumulative cell measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import inf

import numpy as np


@dataclass(frozen=True)
class LorentzSpec:
    p: float
    q: float

    def __post_init__(self):
        if not self.p >= 1 or not self.q >= 1:
            raise ValueError(f"Lorentz exponents must be >= 1, got p={self.p}, q={self.q}")


@dataclass(frozen=True)
class Rearrangement:
    """Distinct values ``a`` in decreasing order with cumulative measures ``mu``.

    ``f*(t) = a[j]`` for ``mu[j-1] < t <= mu[j]``.
    """

    a: np.ndarray
    mu: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mu[-1])

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.mu, prepend=0.0)

    def f_star(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.mu, t, side="left")
        return np.where(idx < len(self.a), self.a[np.minimum(idx, len(self.a) - 1)], 0.0)

    def f_star_star(self, t) -> np.ndarray:
        """Running average ``(1/t) int_0^t f*``."""
        t = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.a * self.weights)])
        mu0 = np.concatenate([[0.0], self.mu])
        idx = np.minimum(np.searchsorted(self.mu, t, side="left"), len(self.a) - 1)
        tc = np.minimum(t, self.total)
        integral = cum[idx] + self.a[idx] * (tc - mu0[idx])
        return integral / t


def rearrange(values: np.ndarray, cell_volume: float, mask: np.ndarray | None = None) -> Rearrangement:
    """Exact decreasing rearrangement of ``|values|`` over the cells in ``mask``."""
    vals = np.abs(np.asarray(values, dtype=float))
    if mask is not None:
        vals = vals[np.asarray(mask, dtype=bool)]
    vals = vals.ravel()
    if vals.size == 0:
        raise ValueError("empty mask: no cells to rearrange")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite values on the mask")
    a, counts = np.unique(vals, return_counts=True)
    a, counts = a[::-1], counts[::-1]
    return Rearrangement(a, np.cumsum(counts) * float(cell_volume))


def lorentz_norm(values: np.ndarray, spec: LorentzSpec, cell_volume: float, mask: np.ndarray | None = None) -> float:
    """``L^{p,q}`` (quasi-)norm with the layer-cake normalization.

    For ``p < inf`` this is ``p^{1/q} (int_0^inf [lam m(lam)^{1/p}]^q dlam/lam)^{1/q}``;
    for ``p = inf`` it is ``(int_0^{|Omega|} [f**(t) - f*(t)]^q dt/t)^{1/q}``
    with the usual sup for ``q = inf``.
    """
    r = rearrange(values, cell_volume, mask)
    p, q = float(spec.p), float(spec.q)
    a, mu = r.a, r.mu
    if p < inf:
        if q == inf:
            return float(np.max(a * mu ** (1.0 / p)))
        nxt = np.append(a[1:], 0.0)
        total = np.sum((a**q - nxt**q) * mu ** (q / p))
        return float((p / q) ** (1.0 / q) * total ** (1.0 / q))
    # f** - f* = C_j / t on (mu_{j-1}, mu_j] with C_j = sum_{i<j} (a_i - a_j) w_i
    if len(a) == 1:
        return 0.0
    w = r.weights
    cum_aw = np.cumsum(a * w)[:-1]
    cum_w = mu[:-1]
    c = cum_aw - a[1:] * cum_w
    lo, hi = mu[:-1], mu[1:]
    if q == inf:
        return float(np.max(c / lo))
    total = np.sum(c**q * (lo ** (-q) - hi ** (-q)) / q)
    return float(total ** (1.0 / q))


def lp_norm(values: np.ndarray, p: float, cell_volume: float, mask: np.ndarray | None = None) -> float:
    """Direct discrete ``L^p`` norm."""
    vals = np.abs(np.asarray(values, dtype=float))
    if mask is not None:
        vals = vals[np.asarray(mask, dtype=bool)]
    if vals.size == 0:
        raise ValueError("empty mask")
    if p == inf:
        return float(vals.max())
    return float((np.sum(vals**p) * cell_volume) ** (1.0 / p))
