"""Periodic grid and field containers for the pseudo-spectral machinery.

The physical domain is [0, 2pi) x [-L, L) with periodic identification in
both directions. Horizontal wavenumbers are integers n; vertical wavenumbers
are quantized as xi = (pi/L) * m for integer m. Transforms are unitary, so
the spectral l2 norm of the coefficients equals the physical L2 norm of the
samples (Parseval with no bookkeeping factors).
"""

from __future__ import annotations

import numpy as np
import scipy.fft


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Grid:
    """Collocation grid on [0, 2pi) x [-L, L), n1 x n2 points.

    Arrays are laid out (n2, n1): axis 0 is x2 (vertical), axis 1 is x1
    (horizontal), so samples are row-major with x1 fastest.
    """

    def __init__(self, n1: int, n2: int, L: float):
        if n1 % 2 or n1 < 16:
            raise ValueError(f"n1 must be even and >= 16, got {n1}")
        if n2 % 2 or n2 < 16:
            raise ValueError(f"n2 must be even and >= 16, got {n2}")
        if not L > 0:
            raise ValueError(f"L must be positive, got {L}")
        self.n1 = int(n1)
        self.n2 = int(n2)
        self.L = float(L)

        self.dx1 = 2 * np.pi / self.n1
        self.dx2 = 2 * self.L / self.n2
        self.dxi = np.pi / self.L
        self.x1 = _frozen(self.dx1 * np.arange(self.n1))
        self.x2 = _frozen(-self.L + self.dx2 * np.arange(self.n2))

        # integer wavenumbers in FFT order
        self.n = _frozen(np.fft.fftfreq(self.n1, d=1.0 / self.n1).astype(np.int64))
        self.m = _frozen(np.fft.fftfreq(self.n2, d=1.0 / self.n2).astype(np.int64))
        self.xi = _frozen(self.dxi * self.m.astype(np.float64))

        # 2D broadcasts, shape (n2, n1)
        self.N = _frozen(np.broadcast_to(self.n[None, :].astype(np.float64),
                                         (self.n2, self.n1)).copy())
        self.XI = _frozen(np.broadcast_to(self.xi[:, None],
                                          (self.n2, self.n1)).copy())
        self.K2 = _frozen(self.N ** 2 + self.XI ** 2)

        # unitary transform scale: see forward()/inverse()
        self.norm_const = np.sqrt(4 * np.pi * self.L)

        nyq1 = self.n1 // 2
        nyq2 = self.n2 // 2
        not_nyq = (np.abs(self.n[None, :]) != nyq1) & (np.abs(self.m[:, None]) != nyq2)
        self.not_nyquist = _frozen(not_nyq)

        keep = ((np.abs(self.n[None, :]) <= self.n1 / 3.0)
                & (np.abs(self.m[:, None]) <= self.n2 / 3.0))
        self.dealias_mask = _frozen(keep)

    @property
    def shape(self):
        return (self.n2, self.n1)

    @property
    def cell_area(self):
        return self.dx1 * self.dx2

    def __eq__(self, other):
        return (isinstance(other, Grid)
                and (self.n1, self.n2, self.L) == (other.n1, other.n2, other.L))

    def __hash__(self):
        return hash((self.n1, self.n2, self.L))

    def __repr__(self):
        return f"Grid(n1={self.n1}, n2={self.n2}, L={self.L})"

    def mesh(self):
        """Physical coordinate meshes X1, X2 with shape (n2, n1)."""
        X1 = np.broadcast_to(self.x1[None, :], self.shape)
        X2 = np.broadcast_to(self.x2[:, None], self.shape)
        return X1, X2


class RealField:
    """Real samples on the collocation points, shape (n2, n1), immutable."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite entries in RealField")
        self.grid = grid
        self.values = _frozen(values)

    def l2(self) -> float:
        """Physical L2 norm, sqrt(dx1*dx2*sum(f^2))."""
        return float(np.sqrt(self.grid.cell_area * np.sum(self.values ** 2)))

    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))


class SpectralField:
    """Complex Fourier coefficients indexed (m, n) in FFT order, immutable.

    Hermitian symmetry (coefficient at (-n, -m) conjugate to (n, m)) is
    expected; it is preserved by every operator in this package and can be
    checked with is_hermitian().
    """

    def __init__(self, grid: Grid, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != grid.shape:
            raise ValueError(f"coeffs shape {coeffs.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("non-finite entries in SpectralField")
        self.grid = grid
        self.coeffs = _frozen(coeffs)

    def l2(self) -> float:
        """Spectral L2 norm; equals the physical L2 norm by unitarity."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        mirrored = np.conj(c[np.ix_(-np.arange(self.grid.n2) % self.grid.n2,
                                    -np.arange(self.grid.n1) % self.grid.n1)])
        scale = max(np.max(np.abs(c)), 1e-300)
        return bool(np.max(np.abs(c - mirrored)) <= tol * scale)

    def mean_mode(self) -> complex:
        return complex(self.coeffs[0, 0])


def forward(f: RealField) -> SpectralField:
    """Unitary forward transform of a real field."""
    g = f.grid
    coeffs = scipy.fft.fft2(f.values) * (g.norm_const / (g.n1 * g.n2))
    return SpectralField(g, coeffs)


def inverse(F: SpectralField) -> RealField:
    """Unitary inverse transform; imaginary residue is discarded.

    For Hermitian-symmetric coefficients the imaginary part is at round-off
    level; the round trip inverse(forward(f)) == f holds to ~1e-15 relative.
    """
    g = F.grid
    values = scipy.fft.ifft2(F.coeffs).real * ((g.n1 * g.n2) / g.norm_const)
    return RealField(g, values)


def require_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {f.grid} vs {g}")
    return g
