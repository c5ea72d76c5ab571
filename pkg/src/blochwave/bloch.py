"""Discrete Bloch transform on a periodic domain of N unit cells.

The line is modeled by N cells of unit period with periodic wrap-around,
sampled at M_pts points per cell.  A function g on that domain decomposes
into N periodic fibers indexed by Floquet exponents

    xi_m = 2 pi m / N - pi,   m = 0..N-1,

each fiber holding the M_pts Fourier coefficients of a 1-periodic function
g_check(xi_m, .).  With the Fourier normalization

    g_hat(theta) = (1/2pi) * integral exp(-i theta x) g(x) dx

the forward transform is an exact reindexing of the length-(N*M_pts) DFT,
the inverse is the trapezoid rule in xi (exact for this grid), and Parseval
holds with constant 2 pi:

    ||g||_{L2}^2 = 2 pi * ||g_check||_{L2((-pi,pi) x (0,1))}^2.

N must be even so that the xi grid coincides with DFT frequencies of the
big domain; odd N is rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SampledLine",
    "BlochField",
    "forward_bloch",
    "inverse_bloch",
    "apply_fiberwise",
    "mixed_norm",
    "line_norm",
    "bloch_field_to_csv",
]


class GridError(ValueError):
    """Inconsistent or unsupported sampling grid."""


@dataclass(frozen=True)
class SampledLine:
    """Samples of a function at x_q = q / pts_per_cell on [0, n_cells).

    values may have leading axes (e.g. one per state component); the last
    axis is space and must have length n_cells * pts_per_cell.
    """

    values: np.ndarray
    n_cells: int
    pts_per_cell: int

    def __post_init__(self):
        if self.n_cells <= 0 or self.pts_per_cell <= 0:
            raise GridError("grid must have a positive number of cells and points")
        if self.n_cells % 2 != 0:
            raise GridError("n_cells must be even for an exact Bloch reindexing")
        vals = np.asarray(self.values)
        if vals.shape[-1] != self.n_cells * self.pts_per_cell:
            raise GridError(
                f"last axis has {vals.shape[-1]} samples, expected "
                f"{self.n_cells * self.pts_per_cell}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_grid(cls, x, values, n_cells):
        """Build from explicit sample positions, rejecting non-uniform grids."""
        x = np.asarray(x, dtype=float)
        values = np.asarray(values)
        if x.ndim != 1 or x.size != values.shape[-1] or x.size == 0:
            raise GridError("positions and values are inconsistent")
        dx = np.diff(x)
        if dx.size and not np.allclose(dx, dx[0], rtol=1e-12, atol=1e-12):
            raise GridError("sample grid is not uniform")
        if x.size % n_cells != 0:
            raise GridError("sample count is not a multiple of the cell count")
        return cls(values, n_cells, x.size // n_cells)

    @property
    def n_samples(self):
        return self.n_cells * self.pts_per_cell

    @property
    def spacing(self):
        return 1.0 / self.pts_per_cell

    @property
    def x(self):
        return np.arange(self.n_samples) / self.pts_per_cell


@dataclass(frozen=True)
class BlochField:
    """Fourier coefficients of the periodic fibers g_check(xi_m, .).

    fibers[..., m, j] is the coefficient of exp(2i pi j_fft x) in the fiber
    at xi_m, with m sorted so that xi runs over [-pi, pi) ascending and the
    mode axis in numpy FFT order.
    """

    fibers: np.ndarray
    n_cells: int
    pts_per_cell: int

    def __post_init__(self):
        fib = np.asarray(self.fibers, dtype=complex)
        if fib.shape[-2:] != (self.n_cells, self.pts_per_cell):
            raise GridError(
                f"fiber array shape {fib.shape[-2:]} does not match grid "
                f"({self.n_cells}, {self.pts_per_cell})"
            )
        if self.n_cells % 2 != 0:
            raise GridError("n_cells must be even")
        object.__setattr__(self, "fibers", fib)

    @property
    def xi(self):
        n = self.n_cells
        return 2.0 * np.pi * np.arange(n) / n - np.pi

    @property
    def mode_numbers(self):
        m = self.pts_per_cell
        return np.fft.fftfreq(m, d=1.0 / m).astype(int)

    def fiber_values(self):
        """Values of each fiber on the unit-cell grid i/pts_per_cell."""
        return np.fft.ifft(self.fibers, axis=-1) * self.pts_per_cell


def _index_map(n_cells, pts_per_cell):
    """DFT bin of the big domain holding fiber m (sorted xi), mode j (fft order)."""
    k_tot = n_cells * pts_per_cell
    m_sorted = np.arange(-n_cells // 2, n_cells // 2)
    j_fft = np.fft.fftfreq(pts_per_cell, d=1.0 / pts_per_cell).astype(int)
    return (m_sorted[:, None] + n_cells * j_fft[None, :]) % k_tot


def forward_bloch(line: SampledLine) -> BlochField:
    """Decompose samples into Floquet fibers.

    The fiber coefficient at (xi_m, mode j) equals g_hat(xi_m + 2 pi j) of
    the domain-periodic discrete Fourier transform, so the map is exact.
    """
    n, m = line.n_cells, line.pts_per_cell
    coef = np.fft.fft(line.values, axis=-1) * (line.spacing / (2.0 * np.pi))
    fibers = coef[..., _index_map(n, m)]
    return BlochField(fibers, n, m)


def inverse_bloch(field: BlochField) -> SampledLine:
    """Trapezoid-rule synthesis g(x) = sum_m dxi exp(i xi_m x) g_check(xi_m, x).

    Exact inverse of forward_bloch on this grid.
    """
    n, m = field.n_cells, field.pts_per_cell
    k_tot = n * m
    coef = np.zeros(field.fibers.shape[:-2] + (k_tot,), dtype=complex)
    coef[..., _index_map(n, m)] = field.fibers
    vals = np.fft.ifft(coef, axis=-1) * (2.0 * np.pi / n) * k_tot
    return SampledLine(vals, n, m)


def apply_fiberwise(field: BlochField, fiber_op) -> BlochField:
    """Apply an operator acting Floquet exponent by Floquet exponent.

    fiber_op is either a callable xi -> (M, M) matrix in the fiber mode
    basis, or a stacked array of shape (N, M, M).
    """
    n, m = field.n_cells, field.pts_per_cell
    if callable(fiber_op):
        mats = np.stack([np.asarray(fiber_op(x), dtype=complex) for x in field.xi])
    else:
        mats = np.asarray(fiber_op, dtype=complex)
    if mats.shape != (n, m, m):
        raise GridError(f"fiber operators have shape {mats.shape}, expected {(n, m, m)}")
    out = np.einsum("mjk,...mk->...mj", mats, field.fibers)
    return BlochField(out, n, m)


def _p_norm(a, weight, p, axis):
    if np.isinf(p):
        return np.max(np.abs(a), axis=axis)
    return (weight * np.sum(np.abs(a) ** p, axis=axis)) ** (1.0 / p)


def mixed_norm(field: BlochField, p_outer, p_inner) -> float:
    """Discrete L^{p_outer}([-pi,pi), L^{p_inner}((0,1))) norm of the fibers.

    Quadrature weights: 2 pi / N in xi, 1 / M_pts in x.
    """
    for p in (p_outer, p_inner):
        if not (p >= 1):
            raise ValueError(f"Lebesgue exponent {p} out of range [1, inf]")
    vals = field.fiber_values()
    inner = _p_norm(vals, 1.0 / field.pts_per_cell, p_inner, axis=-1)
    outer = _p_norm(inner, 2.0 * np.pi / field.n_cells, p_outer, axis=-1)
    return outer if outer.ndim else float(outer)


def line_norm(line: SampledLine, p) -> float:
    """Discrete L^p norm over the whole domain, weight 1/pts_per_cell."""
    out = _p_norm(line.values, line.spacing, p, axis=-1)
    return out if np.ndim(out) else float(out)


def bloch_field_to_csv(field: BlochField, path):
    """Debug dump, one row per (xi, mode) pair: xi, mode_index, re, im."""
    fib = field.fibers
    if fib.ndim != 2:
        raise ValueError("csv dump expects a single-component field")
    modes = field.mode_numbers
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "mode_index", "re", "im"])
        for mi, xi in enumerate(field.xi):
            for ji, j in enumerate(modes):
                w.writerow([repr(float(xi)), int(j),
                            repr(float(fib[mi, ji].real)), repr(float(fib[mi, ji].imag))])
