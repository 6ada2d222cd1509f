"""Fourier-multiplier operators: fractional derivatives, Sobolev norms,
stream function and Darcy velocity, dealiasing.

Conventions
-----------
* Fractional powers use numpy semantics, so 0**0 == 1 and 0**s == 0 for
  s > 0. The zero mode is therefore annihilated by any positive fractional
  derivative and passed through unchanged at s == 0.
* sobolev_norm uses ||f||_{H^k}^2 = ||f||_{L2}^2 + ||f||_{Hdot^k}^2 with the
  anisotropic weight |n|^{2k} + |xi|^{2k}. At k == 0 the seminorm term is
  taken to duplicate the L2 norm, so ||f||_{H^0} = sqrt(2) ||f||_{L2}. This
  zero-exponent convention is deliberate and recorded in run manifests; all
  decay diagnostics use ratios in which the constant cancels.
* Odd multipliers (plain derivatives, stream function, velocity) zero the
  Nyquist rows/columns first, removing the usual sign ambiguity.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, RealField, SpectralField, forward, inverse


def _mult(F: SpectralField, multiplier) -> SpectralField:
    return SpectralField(F.grid, F.coeffs * multiplier)


def frac_deriv(F: SpectralField, axis, s: float) -> SpectralField:
    """Apply |D1|^s, |D2|^s, or their sum (axis 1, 2, or "both")."""
    if s < 0:
        raise ValueError(f"fractional order must be >= 0, got {s}")
    g = F.grid
    if axis in (1, "1"):
        m = np.abs(g.N) ** s
    elif axis in (2, "2"):
        m = np.abs(g.XI) ** s
    elif axis == "both":
        # numpy's 0**0 == 1, so s == 0 gives the literal multiplier 2
        m = np.abs(g.N) ** s + np.abs(g.XI) ** s
    else:
        raise ValueError(f"axis must be 1, 2 or 'both', got {axis!r}")
    return _mult(F, m)


def sobolev_norm(F: SpectralField, k: float) -> float:
    """Anisotropic H^k norm (see module docstring for the k == 0 convention)."""
    if k < 0:
        raise ValueError(f"Sobolev index must be >= 0, got {k}")
    g = F.grid
    p2 = np.abs(F.coeffs) ** 2
    l2sq = float(np.sum(p2))
    if k == 0:
        hdot_sq = l2sq
    else:
        hdot_sq = float(np.sum((np.abs(g.N) ** (2 * k) + np.abs(g.XI) ** (2 * k)) * p2))
    return float(np.sqrt(l2sq + hdot_sq))


def aniso_seminorm(F: SpectralField, s1: float, s2: float) -> float:
    """sqrt( sum |n|^{2 s1} (|n|^{2 s2} + |xi|^{2 s2}) |F|^2 )."""
    if s1 < 0 or s2 < 0:
        raise ValueError(f"exponents must be >= 0, got s1={s1}, s2={s2}")
    g = F.grid
    w = np.abs(g.N) ** (2 * s1) * (np.abs(g.N) ** (2 * s2) + np.abs(g.XI) ** (2 * s2))
    return float(np.sqrt(np.sum(w * np.abs(F.coeffs) ** 2)))


def deriv(F: SpectralField, axis: int) -> SpectralField:
    """Spectral first derivative with Nyquist modes zeroed."""
    g = F.grid
    sym = g.N if axis == 1 else g.XI
    return _mult(F, 1j * sym * g.not_nyquist)


def stream_function(theta: SpectralField) -> SpectralField:
    """Solve -Lap(Psi) = d1 theta with zero horizontal average.

    Psi_hat(n, xi) = i n theta_hat / (n^2 + xi^2) for n != 0, and the whole
    n = 0 column is zero (the horizontal average of Psi vanishes).
    """
    g = theta.grid
    denom = np.where(g.K2 == 0, 1.0, g.K2)
    mult = np.where(g.N == 0, 0.0, 1.0) * g.not_nyquist * g.N / denom
    return _mult(theta, 1j * mult)


def velocity(theta: SpectralField):
    """Darcy velocity u = grad^perp Psi as a pair (u1, u2) of spectral fields.

    u1_hat = n xi theta_hat / (n^2 + xi^2), u2_hat = -n^2 theta_hat / (n^2 + xi^2);
    the spectral divergence i n u1 + i xi u2 vanishes coefficient-wise.
    """
    g = theta.grid
    denom = np.where(g.K2 == 0, 1.0, g.K2)
    w = (g.N * g.not_nyquist / denom) * theta.coeffs
    u1 = SpectralField(g, g.XI * w)
    u2 = SpectralField(g, -(g.N * w))
    return u1, u2


def dealias(F: SpectralField) -> SpectralField:
    """2/3-rule truncation: zero all modes with |n| > n1/3 or |m| > n2/3."""
    return _mult(F, F.grid.dealias_mask)


def grad_linf(F: SpectralField) -> float:
    """max over collocation points of |(d1 F, d2 F)|."""
    g1 = inverse(deriv(F, 1)).values
    g2 = inverse(deriv(F, 2)).values
    return float(np.max(np.sqrt(g1 ** 2 + g2 ** 2)))


def spectral_divergence(u1: SpectralField, u2: SpectralField) -> float:
    """Max modulus of i n u1_hat + i xi u2_hat, for divergence-free checks."""
    g = u1.grid
    div = 1j * g.N * u1.coeffs + 1j * g.XI * u2.coeffs
    return float(np.max(np.abs(div)))


__all__ = [
    "frac_deriv", "sobolev_norm", "aniso_seminorm", "deriv", "stream_function",
    "velocity", "dealias", "grad_linf", "spectral_divergence",
    "Grid", "RealField", "SpectralField", "forward", "inverse",
]
