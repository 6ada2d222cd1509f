"""Named analytic initial-data families used by the CLI and the test suites."""

from __future__ import annotations

import numpy as np

from .grid import Grid, RealField, SpectralField, forward
from .linear import SharpnessSpec, sharpness_data
from .spectral import dealias, sobolev_norm


def zero(grid: Grid) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.shape, dtype=np.complex128))


def sine_gaussian(grid: Grid, amplitude: float = 0.05,
                  width: float = 1.0) -> SpectralField:
    """amplitude * sin(x1) * exp(-(x2/width)^2), the reference smooth bump."""
    X1, X2 = grid.mesh()
    vals = amplitude * np.sin(X1) * np.exp(-(X2 / width) ** 2)
    return dealias(forward(RealField(grid, vals)))


def windowed_rough(grid: Grid, k: float, eps: float = 0.25,
                   window_fraction: float = 0.55) -> SpectralField:
    """Slow-decay rough data localized in the vertical, unit H^k size.

    The raw slow-decay field fills the whole strip; multiplying by a flat-top
    window exp(-(x2/(w L))^8) restores the compact support that the potential
    energy diagnostics assume, while keeping the n = +-1 structure (the
    window depends on x2 only) and the rough Fourier tail.
    """
    from .grid import inverse

    spec = SharpnessSpec(k=k, eps=eps, grid=grid)
    raw = inverse(sharpness_data(spec)).values
    _, X2 = grid.mesh()
    vals = raw * np.exp(-(X2 / (window_fraction * grid.L)) ** 8)
    field = dealias(forward(RealField(grid, vals)))
    hk = sobolev_norm(field, k)
    return SpectralField(grid, field.coeffs / hk)


def bump_plus_rough(grid: Grid, k: float, amplitude: float = 0.05,
                    rough_amplitude: float = 1e-2, eps: float = 0.25,
                    width: float = 1.0) -> SpectralField:
    """Smooth bump plus a small rough component with H^k size rough_amplitude."""
    smooth = sine_gaussian(grid, amplitude, width)
    rough = windowed_rough(grid, k, eps)
    return SpectralField(grid, smooth.coeffs + rough_amplitude * rough.coeffs)


def random_blobs(grid: Grid, seed: int, amplitude: float = 0.1,
                 n_modes: int = 3, min_gamma: float = 0.5) -> SpectralField:
    """Seeded family of smooth compact perturbations keeping inf(-d2 rho) >= min_gamma.

    Sums a few low horizontal modes with Gaussian vertical envelopes at random
    centers; amplitudes are rescaled until the stratification margin holds.
    """
    rng = np.random.default_rng(seed)
    X1, X2 = grid.mesh()
    vals = np.zeros(grid.shape)
    for jmode in range(1, n_modes + 1):
        a = rng.uniform(0.3, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        center = rng.uniform(-0.3, 0.3) * grid.L
        width = rng.uniform(0.8, 2.0)
        vals += a * np.sin(jmode * X1 + phase) * np.exp(-((X2 - center) / width) ** 2)
    vals *= amplitude / max(np.max(np.abs(vals)), 1e-300)
    for _ in range(40):
        d2 = np.gradient(vals, grid.x2, axis=0)
        if np.max(d2) <= 1.0 - min_gamma:
            break
        vals *= 0.8
    return dealias(forward(RealField(grid, vals)))


FAMILIES = {
    "zero": zero,
    "sine_gaussian": sine_gaussian,
    "bump_plus_rough": bump_plus_rough,
    "random_blobs": random_blobs,
}
