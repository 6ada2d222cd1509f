"""Exact evolution of the linearized equation around the affine background,
decay weights, and the slow-decay initial data with its 1D quadrature oracle.

Linearizing around rho_s = -x2 gives theta_t = u2, which is diagonal in
Fourier space: each coefficient is damped by exp(-t n^2/(n^2 + xi^2)). The
n = 0 column (horizontal mean) is frozen.

The slow-decay family places a Hermitian pair of modes at n = +-1 with
modulus |xi|^(-k - 1/2 - 2 eps) above the cutoff |xi| >= 1. Its L2 and
velocity H2 norms reduce to 1D integrals in xi, evaluated here by adaptive
quadrature as an oracle that is independent of the 2D transform pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .grid import Grid, SpectralField


class OracleConvergenceError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


ORACLE_QUANTITIES = ("L2", "H2_of_U", "H2_of_U2")


@dataclass(frozen=True)
class LinearState:
    """Spectral perturbation together with its evolution time."""
    theta: SpectralField
    t: float

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"time must be >= 0, got {self.t}")


@dataclass(frozen=True)
class SharpnessSpec:
    """Parameters of the slow-decay family: regularity k > 2, 0 < eps < 1."""
    k: float
    eps: float
    grid: Grid

    def __post_init__(self):
        if not self.k > 2:
            raise ValueError(f"k must be > 2, got {self.k}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must be in (0, 1), got {self.eps}")
        if self.grid.dxi > 0.5:
            raise ValueError(
                f"grid too coarse to resolve |xi| >= 1: dxi = {self.grid.dxi:.4f} > 0.5")

    @property
    def tail_exponent(self) -> float:
        return self.k + 0.5 + 2 * self.eps


def multiplier(n: int, xi: float, t: float) -> float:
    """Decay factor exp(-t n^2/(n^2 + xi^2)); equals 1 for the frozen n = 0."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if n == 0:
        return 1.0
    return math.exp(-t * n * n / (n * n + xi * xi))


def _multiplier_array(grid: Grid, dt: float):
    ratio = np.where(grid.K2 == 0, 0.0, grid.N ** 2 / np.where(grid.K2 == 0, 1.0, grid.K2))
    return np.exp(-dt * ratio)


def evolve_exact(state: LinearState, dt: float) -> LinearState:
    """Advance the affine-background linear flow by dt (exact semigroup)."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    coeffs = state.theta.coeffs * _multiplier_array(state.theta.grid, dt)
    return LinearState(SpectralField(state.theta.grid, coeffs), state.t + dt)


def weight_W(t: float, n: int, xi: float, k: float, s1: float, s2: float) -> float:
    """Decay weight n^{2 s1} / (n^2 + xi^2)^{k - s2} * exp(-2 t n^2/(n^2 + xi^2))."""
    if n == 0:
        raise ValueError("weight is defined for |n| >= 1 only")
    if s1 + s2 > k:
        raise ValueError(f"require s1 + s2 <= k, got s1={s1}, s2={s2}, k={k}")
    q = n * n + xi * xi
    return (n ** (2 * s1) / q ** (k - s2)) * math.exp(-2 * t * n * n / q)


def weight_W_bound(t: float, k: float, s2: float) -> float:
    """Uniform bound ((k - s2)/(2e))^(k - s2) * t^(-(k - s2)) on weight_W.

    Comes from sup_{x > 0} x^a e^(-x) = (a/e)^a applied to x = 2 t n^2/(n^2+xi^2)
    together with |n| >= 1. For k == s2 the bound is exactly 1.
    """
    a = k - s2
    if a < 0:
        raise ValueError(f"require s2 <= k, got s2={s2}, k={k}")
    if a == 0:
        return 1.0
    if t <= 0:
        raise ValueError("bound requires t > 0")
    return (a / (2 * math.e)) ** a * t ** (-a)


def sharpness_cutoff(grid: Grid) -> float:
    """Effective lower cutoff of the |xi| >= 1 indicator on the grid.

    Modes with |xi| < 1 - dxi/2 are zeroed (half-cell convention); the first
    retained mode's cell therefore starts at (m0 - 1/2) dxi, which is what a
    band-matched oracle should use as its lower integration limit.
    """
    m0 = math.ceil(1.0 / grid.dxi - 0.5 - 1e-12)
    return (m0 - 0.5) * grid.dxi


def sharpness_data(spec: SharpnessSpec) -> SpectralField:
    """Initial data with Fourier tail |xi|^(-k-1/2-2 eps) at n = +-1.

    Coefficients are real and even in xi, which realizes the Hermitian pair
    exactly; all modes with |xi| < 1 - dxi/2 or outside n = +-1 vanish.
    """
    g = spec.grid
    absxi = np.abs(g.xi)
    keep = absxi >= 1.0 - g.dxi / 2 - 1e-12
    profile = np.zeros(g.n2)
    profile[keep] = absxi[keep] ** (-spec.tail_exponent)
    coeffs = np.zeros(g.shape, dtype=np.complex128)
    col_plus = np.where(g.n == 1)[0][0]
    col_minus = np.where(g.n == -1)[0][0]
    coeffs[:, col_plus] = profile
    coeffs[:, col_minus] = profile
    return SpectralField(g, coeffs)


def _oracle_integrand(quantity: str, t: float, p: float):
    if quantity == "L2":
        def f(xi):
            return math.exp(-2 * t / (1 + xi * xi)) * xi ** (-p)
    elif quantity == "H2_of_U":
        def f(xi):
            q = 1 + xi * xi
            return math.exp(-2 * t / q) * xi ** (-p) * (2 + xi ** 4) / q
    elif quantity == "H2_of_U2":
        def f(xi):
            q = 1 + xi * xi
            return math.exp(-2 * t / q) * xi ** (-p) * (2 + xi ** 4) / (q * q)
    else:
        raise ValueError(f"unknown quantity {quantity!r}; expected one of {ORACLE_QUANTITIES}")
    return f


def linear_norm_oracle(spec: SharpnessSpec, t: float, quantity: str = "L2",
                       band: str = "ideal") -> float:
    """1D quadrature of the exact squared-norm integral for the slow-decay data.

    band="ideal" integrates the indicator data over [1, inf), the continuum
    object. band="grid" integrates over the band the grid actually carries,
    [(m0 - 1/2) dxi, (n2/2 + 1/2) dxi], which is the right-hand side for
    comparisons against the 2D pipeline at finite resolution (the two data
    differ at order dxi near the cutoff and in the truncated tail).

    Relative quadrature error is driven below 1e-8; the integration is split
    at xi = sqrt(t), the transition scale of the integrand.
    """
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    p = 2 * spec.tail_exponent
    f = _oracle_integrand(quantity, t, p)
    if band == "ideal":
        lo, hi = 1.0, math.inf
    elif band == "grid":
        lo = sharpness_cutoff(spec.grid)
        hi = (spec.grid.n2 // 2 + 0.5) * spec.grid.dxi
    else:
        raise ValueError(f"band must be 'ideal' or 'grid', got {band!r}")

    split = math.sqrt(max(t, 1.0))
    pieces = []
    if lo < split < hi:
        pieces.append((lo, split))
        pieces.append((split, hi))
    else:
        pieces.append((lo, hi))
    total, err = 0.0, 0.0
    for a, b in pieces:
        v, e = quad(f, a, b, epsabs=0.0, epsrel=1e-10, limit=400)
        total += v
        err += e
    if not math.isfinite(total) or (total > 0 and err / total > 1e-8):
        raise OracleConvergenceError(
            f"quadrature error {err:.3e} on value {total:.3e} exceeds 1e-8 relative")
    return 2.0 * total


def grid_norm_squared(theta_t: SpectralField, quantity: str, grid: Grid) -> float:
    """Evaluate the oracle quantities through the 2D pipeline, in oracle units.

    The grid field carries the mass of one dxi cell per retained mode and a
    Hermitian pair at n = +-1, so spectral sums convert to the 1D integral
    convention through the factor dxi / 2.
    """
    from .spectral import sobolev_norm, velocity

    if quantity == "L2":
        val = theta_t.l2() ** 2
    else:
        u1, u2 = velocity(theta_t)
        if quantity == "H2_of_U":
            val = sobolev_norm(u1, 2) ** 2 + sobolev_norm(u2, 2) ** 2
        elif quantity == "H2_of_U2":
            val = sobolev_norm(u2, 2) ** 2
        else:
            raise ValueError(f"unknown quantity {quantity!r}")
    return val * grid.dxi / 2.0


def sharpness_lower_bound_constant(k: float) -> float:
    """C = int_0^1 exp(-2 eta) eta^(k+1) d eta, the explicit lower-bound constant."""
    v, e = quad(lambda h: math.exp(-2 * h) * h ** (k + 1), 0.0, 1.0,
                epsabs=0.0, epsrel=1e-12)
    if e / v > 1e-10:
        raise OracleConvergenceError("lower-bound constant quadrature did not converge")
    return v
