"""Nonlinear pseudo-spectral integration of the stratified perturbation
equation theta_t + u . grad theta = -d2(rho_s) u2.

Products are formed pointwise in physical space and dealiased with the 2/3
rule; time stepping is classical RK4 with a CFL-limited step (the linear
symbol n^2/(n^2 + xi^2) is bounded by 1, so there is no stiffness to split
off). The horizontal mean (0, 0) coefficient of theta is conserved exactly.

The potential-energy column tracks E(t) = E(0) + int theta(t) x2 dx
- int theta(0) x2 dx, which equals the level-set potential energy along the
flow because d/dt int theta x2 dx = -||u||^2 for any background profile; the
offset E(0) = (1/2)||h0||^2 comes from the level-set decomposition of the
initial density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridMismatchError, RealField, SpectralField, forward, inverse
from .spectral import dealias, deriv, grad_linf, sobolev_norm, velocity
from .diagnostics import NormSeries


class BlowUpError(RuntimeError):
    """Non-finite state or runaway norm detected during time stepping."""


def _periodic_derivatives(samples, L, order):
    """Iterated central finite differences of a periodic 1D sample array."""
    h = 2 * L / len(samples)
    out = [np.asarray(samples, dtype=np.float64)]
    cur = out[0]
    for _ in range(order):
        cur = (np.roll(cur, -1) - np.roll(cur, 1)) / (2 * h)
        out.append(cur)
    return out


class StratifiedProfile:
    """Stable background rho_s(x2) = -x2 + periodic part, known through samples.

    d2_samples holds d(rho_s)/dx2 on the vertical grid; gamma is the grid
    infimum of -d2(rho_s) and must be positive (stable stratification).
    c_norm is a finite-difference proxy for the C^(k+1) size of d2(rho_s),
    estimated from derivatives up to fourth order.
    """

    def __init__(self, grid: Grid, kind: str, d2_samples, rho_samples):
        if kind not in ("affine", "affine_plus_periodic"):
            raise ValueError(f"unknown profile kind {kind!r}")
        d2_samples = np.asarray(d2_samples, dtype=np.float64)
        rho_samples = np.asarray(rho_samples, dtype=np.float64)
        if d2_samples.shape != (grid.n2,) or rho_samples.shape != (grid.n2,):
            raise ValueError("profile samples must match the vertical grid")
        gamma = float(np.min(-d2_samples))
        if gamma <= 0:
            raise ValueError(f"profile is not stably stratified: inf(-d2 rho_s) = {gamma}")
        if kind == "affine" and not np.allclose(d2_samples, -1.0, atol=1e-14):
            raise ValueError("affine profile requires d2(rho_s) == -1")
        self.grid = grid
        self.kind = kind
        self.d2_samples = d2_samples
        self.rho_samples = rho_samples
        self.gamma = gamma
        derivs = _periodic_derivatives(d2_samples, grid.L, order=4)
        self.c_norm = float(max(np.max(np.abs(d)) for d in derivs))

    @classmethod
    def affine(cls, grid: Grid) -> "StratifiedProfile":
        """rho_s = -x2, the simplest stable background."""
        return cls(grid, "affine", -np.ones(grid.n2), -grid.x2.copy())

    @classmethod
    def affine_plus_periodic(cls, grid: Grid, coeffs) -> "StratifiedProfile":
        """d2(rho_s) = -1 + sum_j c_j cos(j pi x2 / L); needs sum |c_j| < 1."""
        coeffs = [float(c) for c in coeffs]
        if sum(abs(c) for c in coeffs) >= 1.0:
            raise ValueError("periodic coefficients too large for stable stratification")
        d2 = -np.ones(grid.n2)
        rho = -grid.x2.copy()
        for j, c in enumerate(coeffs, start=1):
            w = j * np.pi / grid.L
            d2 = d2 + c * np.cos(w * grid.x2)
            rho = rho + (c / w) * np.sin(w * grid.x2)
        return cls(grid, "affine_plus_periodic", d2, rho)

    def structure_gamma(self, k: float) -> float:
        """min(k - 2, gamma, 1/c_norm), the stability structure constant."""
        return min(k - 2.0, self.gamma, 1.0 / self.c_norm)

    def rho_field(self, theta_phys: RealField) -> RealField:
        """Full density rho = rho_s + theta as a physical field."""
        return RealField(self.grid, theta_phys.values + self.rho_samples[:, None])


@dataclass(frozen=True)
class SolverConfig:
    grid: Grid
    profile: StratifiedProfile
    k: float
    t_end: float
    cfl_safety: float = 0.4
    dt_max: float = 0.05
    snapshot_cadence: float = 5.0
    diagnostic_cadence: float = 0.05
    boundary_margin: float = 0.1
    include_advection: bool = True
    track_rearrangement: bool = True

    def __post_init__(self):
        if not self.k > 2:
            raise ValueError(f"k must be > 2, got {self.k}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.snapshot_cadence <= 0 or self.diagnostic_cadence <= 0:
            raise ValueError("cadences must be positive")
        if not 0 < self.boundary_margin < 1:
            raise ValueError("boundary_margin must be a fraction of L in (0, 1)")
        if self.profile.grid != self.grid:
            raise ValueError("profile grid does not match solver grid")


@dataclass(frozen=True)
class SimulationState:
    theta: SpectralField
    t: float
    step_count: int


@dataclass
class Trajectory:
    snapshots: list
    series: NormSeries
    manifest: dict


def rhs(theta: SpectralField, profile: StratifiedProfile,
        advection: bool = True) -> SpectralField:
    """Right-hand side -dealias(u . grad theta) - d2(rho_s) u2 in spectral form.

    The advection product is formed on collocation points and dealiased. For
    the affine background the forcing term is exactly +u2 and is kept
    spectral; general profiles form the product physically as well.
    """
    import scipy.fft

    g = theta.grid
    if profile.grid != g:
        raise GridMismatchError(f"profile grid {profile.grid} != field grid {g}")
    u1s, u2s = velocity(theta)

    if not advection:
        if profile.kind == "affine":
            forcing = u2s.coeffs
        else:
            u2p = inverse(u2s).values
            forcing = forward(RealField(g, -profile.d2_samples[:, None] * u2p)).coeffs
        return SpectralField(g, forcing * g.dealias_mask)

    stack = np.stack([u1s.coeffs, u2s.coeffs,
                      deriv(theta, 1).coeffs, deriv(theta, 2).coeffs])
    phys = scipy.fft.ifft2(stack, axes=(-2, -1)).real * ((g.n1 * g.n2) / g.norm_const)
    u1p, u2p, t1, t2 = phys

    if profile.kind == "affine":
        adv = scipy.fft.fft2(u1p * t1 + u2p * t2) * (g.norm_const / (g.n1 * g.n2))
        out = u2s.coeffs - adv
    else:
        prods = np.stack([u1p * t1 + u2p * t2,
                          -profile.d2_samples[:, None] * u2p])
        spec = scipy.fft.fft2(prods, axes=(-2, -1)) * (g.norm_const / (g.n1 * g.n2))
        out = spec[1] - spec[0]
    return SpectralField(g, out * g.dealias_mask)


def velocity_linf(theta: SpectralField) -> float:
    u1s, u2s = velocity(theta)
    u1 = inverse(u1s).values
    u2 = inverse(u2s).values
    return float(np.max(np.sqrt(u1 ** 2 + u2 ** 2)))


def cfl_dt(theta: SpectralField, safety: float, dt_max: float) -> float:
    """Advective step limit safety * min(dx1, dx2) / max(||u||_inf, 1e-8)."""
    g = theta.grid
    umax = max(velocity_linf(theta), 1e-8)
    return min(safety * min(g.dx1, g.dx2) / umax, dt_max)


def step_rk4(state: SimulationState, dt: float, profile: StratifiedProfile,
             advection: bool = True) -> SimulationState:
    """Classical four-stage Runge-Kutta update with a blow-up guard."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = state.theta.grid
    y = state.theta.coeffs

    def f(c):
        return rhs(SpectralField(g, c), profile, advection=advection).coeffs

    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    ynew = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(ynew)):
        raise BlowUpError(f"non-finite coefficients after step at t = {state.t}")
    return SimulationState(SpectralField(g, ynew), state.t + dt, state.step_count + 1)


def _theta_x2_integral(theta_phys_values, grid: Grid) -> float:
    return float(grid.cell_area * np.sum(theta_phys_values * grid.x2[:, None]))


def _support_reaches_margin(theta_phys_values, grid: Grid, margin: float) -> bool:
    amax = np.max(np.abs(theta_phys_values))
    if amax == 0.0:
        return False
    outside = np.abs(grid.x2) > grid.L * (1.0 - margin)
    return bool(np.any(np.abs(theta_phys_values[outside, :]) > 1e-10 * amax))


def run(config: SolverConfig, theta0: SpectralField) -> Trajectory:
    """Integrate to t_end, emitting snapshots and the diagnostic series.

    The initial field is dealiased; its H^k size is recorded (the smallness
    threshold of the stability theory is not computable, so smallness is
    advisory). Aborts on the blow-up guard with the last valid state kept.
    """
    g = theta0.grid
    if config.grid != g:
        raise GridMismatchError(f"config grid {config.grid} != field grid {g}")
    theta = dealias(theta0)
    state = SimulationState(theta, 0.0, 0)

    hk0 = sobolev_norm(theta, config.k)
    manifest = {
        "theta0_hk": hk0,
        "k": config.k,
        "gamma": config.profile.gamma,
        "structure_gamma": config.profile.structure_gamma(config.k),
        "profile_kind": config.profile.kind,
        "include_advection": config.include_advection,
        "boundary_margin_violation": False,
        "status": "completed",
        "abort_reason": None,
        "blowup_hk_threshold": 1e6,
    }

    energy0 = 0.0
    rho_star = config.profile.rho_samples
    if config.track_rearrangement:
        from . import stratify
        theta_phys = inverse(theta)
        rho0 = config.profile.rho_field(theta_phys)
        levels = stratify.LevelGrid.auto(rho0, margin_fraction=config.boundary_margin)
        dec = stratify.decompose(rho0, levels, background=config.profile.rho_samples)
        energy0 = stratify.potential_energy(dec, levels)
        rho_star = dec.f_star
    manifest["initial_potential_energy"] = energy0

    times = []
    cols = {name: [] for name in
            ("l2_theta", "hk_theta", "l2_u", "h2_u", "h2_u2",
             "grad_linf_u2", "energy_E")}
    if config.track_rearrangement:
        cols["l2_rho_minus_rhostar"] = []

    theta0_phys = inverse(theta).values
    I0 = _theta_x2_integral(theta0_phys, g)

    def record(st: SimulationState):
        th = st.theta
        u1, u2 = velocity(th)
        phys = inverse(th).values
        times.append(st.t)
        cols["l2_theta"].append(th.l2())
        cols["hk_theta"].append(sobolev_norm(th, config.k))
        cols["l2_u"].append(math.sqrt(u1.l2() ** 2 + u2.l2() ** 2))
        cols["h2_u"].append(math.sqrt(sobolev_norm(u1, 2) ** 2 + sobolev_norm(u2, 2) ** 2))
        cols["h2_u2"].append(sobolev_norm(u2, 2))
        cols["grad_linf_u2"].append(grad_linf(u2))
        cols["energy_E"].append(energy0 + _theta_x2_integral(phys, g) - I0)
        if config.track_rearrangement:
            diff = phys + config.profile.rho_samples[:, None] - rho_star[:, None]
            cols["l2_rho_minus_rhostar"].append(
                float(np.sqrt(g.cell_area * np.sum(diff ** 2))))
        if _support_reaches_margin(phys, g, config.boundary_margin):
            manifest["boundary_margin_violation"] = True

    snapshots = [state]
    record(state)
    next_snap = config.snapshot_cadence
    next_diag = config.diagnostic_cadence
    eps = 1e-12 * max(config.t_end, 1.0)

    try:
        while state.t < config.t_end - eps:
            target = min(next_diag, next_snap, config.t_end)
            dt = min(cfl_dt(state.theta, config.cfl_safety, config.dt_max),
                     target - state.t)
            stepped = step_rk4(state, dt, config.profile,
                               advection=config.include_advection)
            hk = sobolev_norm(stepped.theta, config.k)
            if not math.isfinite(hk) or hk > 1e6:
                raise BlowUpError(f"H^k norm {hk:.3e} exceeded guard at t = {stepped.t}")
            state = stepped
            if state.t >= next_diag - eps:
                record(state)
                next_diag = round(state.t / config.diagnostic_cadence + 1) \
                    * config.diagnostic_cadence
            if state.t >= next_snap - eps:
                snapshots.append(state)
                next_snap = round(state.t / config.snapshot_cadence + 1) \
                    * config.snapshot_cadence
    except BlowUpError as exc:
        # keep the last valid state as the final snapshot
        manifest["status"] = "aborted"
        manifest["abort_reason"] = str(exc)

    if snapshots[-1].t < state.t - eps:
        snapshots.append(state)

    series = NormSeries(np.array(times), {n: np.array(c) for n, c in cols.items()},
                        k=config.k)
    manifest["steps"] = state.step_count
    manifest["t_final"] = state.t
    return Trajectory(snapshots=snapshots, series=series, manifest=manifest)
