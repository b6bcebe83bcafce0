"""Periodic grids on ``[-L, L)^n`` and fields sampled on them.

Index ``N // 2`` along every axis is the origin, so point ``j`` sits at
``x = -L + j h`` with ``h = 2L / N``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft


def fft_workers() -> int:
    """Worker count for ``scipy.fft``, capped by ``OPCANCEL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("OPCANCEL_THREADS", "1")))
    except ValueError:
        return 1


def fftn(a: np.ndarray, n: int) -> np.ndarray:
    return scipy.fft.fftn(a, axes=tuple(range(n)), workers=fft_workers())


def ifftn(a: np.ndarray, n: int) -> np.ndarray:
    return scipy.fft.ifftn(a, axes=tuple(range(n)), workers=fft_workers())


@dataclass(frozen=True)
class Grid:
    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ValueError(f"points per dimension must be even and >= 4, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"box half-width must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(N,)*n + (n,)``."""
        return np.stack(np.meshgrid(*([self.axis] * self.n), indexing="ij"), axis=-1)

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.coords(), axis=-1)

    @cached_property
    def axis_freq(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    def frequencies(self) -> np.ndarray:
        """Angular frequencies in FFT order, shape ``(N,)*n + (n,)``."""
        return np.stack(np.meshgrid(*([self.axis_freq] * self.n), indexing="ij"), axis=-1)

    def nyquist_mask(self) -> np.ndarray:
        """True where any frequency component is the unpaired Nyquist mode."""
        ny = np.zeros(self.N, dtype=bool)
        ny[self.N // 2] = True
        mask = np.zeros(self.shape, dtype=bool)
        for d in range(self.n):
            shape = [1] * self.n
            shape[d] = self.N
            mask |= ny.reshape(shape)
        return mask

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.N // 2,) * self.n


@dataclass
class GridField:
    """Values of a (vector or matrix valued) field on a periodic grid.

    ``values`` has shape ``(N,)*n + component_shape``; ``singular`` marks cells
    excluded from norms and fits (typically the origin).
    """

    grid: Grid
    values: np.ndarray
    singular: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape[: self.grid.n] != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not start with grid shape {self.grid.shape}")
        if self.singular is None:
            self.singular = np.zeros(self.grid.shape, dtype=bool)
        finite = np.isfinite(self.values).reshape(self.grid.shape + (-1,)).all(axis=-1)
        if not np.all(finite | self.singular):
            raise ValueError("field has non-finite values outside the marked singular set")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def component_shape(self) -> tuple[int, ...]:
        return self.values.shape[self.grid.n :]

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean (Frobenius) norm of the components."""
        if not self.component_shape:
            return np.abs(self.values)
        flat = self.values.reshape(self.grid.shape + (-1,))
        return np.linalg.norm(flat, axis=-1)

    def header(self) -> dict:
        return {
            "n": self.grid.n,
            "N": self.grid.N,
            "L": self.grid.L,
            "component_shape": list(self.component_shape),
        }

    def to_bytes(self) -> bytes:
        """JSON header line followed by little-endian float64 values in C order."""
        head = json.dumps(self.header(), sort_keys=True).encode() + b"\n"
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        head, _, body = data.partition(b"\n")
        meta = json.loads(head)
        grid = Grid(meta["n"], meta["L"], meta["N"])
        shape = grid.shape + tuple(meta["component_shape"])
        values = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
        return cls(grid, values, singular=~np.isfinite(values).reshape(grid.shape + (-1,)).all(axis=-1))

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    def csv_slice(self, axis: int = 0) -> str:
        """CSV of the field along coordinate ``axis`` through the origin."""
        idx = list(self.grid.origin_index)
        idx[axis] = slice(None)
        vals = self.values[tuple(idx)].reshape(self.grid.N, -1)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x"] + [f"c{i}" for i in range(vals.shape[1])])
        for x, row in zip(self.grid.axis, vals):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the target directory followed by a rename."""
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
