"""Nonlinear solver: right-hand side structure, CFL logic, RK4 accuracy,
conservation properties, and the run loop."""

import math

import numpy as np
import pytest

from ipmlab import (BlowUpError, Grid, LinearState, RealField, SimulationState,
                    SolverConfig, SpectralField, StratifiedProfile, cfl_dt,
                    evolve_exact, forward, inverse, rhs, run, sobolev_norm,
                    step_rk4, velocity)
from ipmlab.families import sine_gaussian, zero
from ipmlab.spectral import dealias, deriv

L = 8 * np.pi


@pytest.fixture(scope="module")
def grid():
    # vertical resolution must keep the dealias band past the data's
    # spectral tail, or discarded n = 0 advection mass biases the
    # potential-energy identity (visible in test_energy_identity_small_run)
    return Grid(32, 256, L)


@pytest.fixture(scope="module")
def affine(grid):
    return StratifiedProfile.affine(grid)


def spectral_inner(a, b):
    return float(np.real(np.sum(np.conj(a.coeffs) * b.coeffs)))


class TestProfile:
    def test_affine(self, grid, affine):
        assert affine.gamma == 1.0
        assert np.allclose(affine.rho_samples, -grid.x2)
        assert affine.c_norm == 1.0

    def test_affine_plus_periodic(self, grid):
        p = StratifiedProfile.affine_plus_periodic(grid, [0.3, -0.1])
        assert p.gamma > 0
        w1 = np.pi / grid.L
        expected = -1 + 0.3 * np.cos(w1 * grid.x2) - 0.1 * np.cos(2 * w1 * grid.x2)
        assert np.allclose(p.d2_samples, expected)
        # rho_samples differentiates back to d2_samples
        drho = np.gradient(p.rho_samples, grid.x2)
        assert np.allclose(drho[2:-2], p.d2_samples[2:-2], atol=5e-3)

    def test_unstable_rejected(self, grid):
        with pytest.raises(ValueError):
            StratifiedProfile.affine_plus_periodic(grid, [1.2])

    def test_structure_gamma(self, grid, affine):
        assert affine.structure_gamma(3.0) == min(1.0, 1.0, 1.0)
        assert affine.structure_gamma(2.5) == 0.5


class TestRhs:
    def test_zero(self, grid, affine):
        out = rhs(zero(grid), affine)
        assert out.l2() == 0.0

    def test_single_mode_linearization(self, grid, affine):
        # theta = delta sin(x1): rhs = -delta sin(x1) + O(delta^2)
        delta = 1e-4
        X1, _ = grid.mesh()
        th = forward(RealField(grid, delta * np.sin(X1)))
        out = inverse(rhs(th, affine))
        assert np.max(np.abs(out.values + delta * np.sin(X1))) < 10 * delta ** 2

    def test_linear_only_matches_multiplier_derivative(self, grid, affine):
        from tests.test_spectral import random_smooth
        th = dealias(forward(random_smooth(grid, 0)))
        out = rhs(th, affine, advection=False)
        g = grid
        denom = np.where(g.K2 == 0, 1.0, g.K2)
        expected = -(g.N ** 2 / denom) * th.coeffs
        assert np.allclose(out.coeffs, expected, atol=1e-15 * np.max(np.abs(th.coeffs)))

    def test_mean_mode_static(self, grid, affine):
        from tests.test_spectral import random_smooth
        th = dealias(forward(random_smooth(grid, 1)))
        assert abs(rhs(th, affine).mean_mode()) < 1e-16 * max(np.max(np.abs(th.coeffs)), 1)

    def test_incompressibility_triple_product(self, grid, affine):
        # int (u . grad theta) theta dx vanishes up to dealiasing round-off
        from tests.test_spectral import random_smooth
        th = dealias(forward(random_smooth(grid, 2)))
        u1s, u2s = velocity(th)
        u1 = inverse(u1s).values
        u2 = inverse(u2s).values
        t1 = inverse(deriv(th, 1)).values
        t2 = inverse(deriv(th, 2)).values
        theta_phys = inverse(th).values
        integral = grid.cell_area * np.sum((u1 * t1 + u2 * t2) * theta_phys)
        u_h1 = math.sqrt(sobolev_norm(u1s, 1) ** 2 + sobolev_norm(u2s, 1) ** 2)
        assert abs(integral) < 1e-10 * th.l2() ** 2 * max(u_h1, 1e-300)

    def test_l2_boundedness_inequality(self, grid, affine):
        from tests.test_spectral import random_smooth
        for seed in range(3):
            th = dealias(forward(random_smooth(grid, seed)))
            f = rhs(th, affine)
            ddt_l2sq = 2 * spectral_inner(th, f)
            u1, u2 = velocity(th)
            u_l2 = math.sqrt(u1.l2() ** 2 + u2.l2() ** 2)
            bound = 2 * np.max(-np.asarray(affine.d2_samples)) * u_l2 * th.l2()
            assert ddt_l2sq <= bound + 1e-8


class TestCfl:
    def test_zero_field_hits_dt_max(self, grid):
        assert cfl_dt(zero(grid), 0.4, 0.05) == 0.05

    def test_amplitude_scaling(self, grid):
        th1 = sine_gaussian(grid, amplitude=0.2)
        th2 = sine_gaussian(grid, amplitude=0.4)
        dt1 = cfl_dt(th1, 1.0, 1e9)
        dt2 = cfl_dt(th2, 1.0, 1e9)
        assert np.isclose(dt1 / dt2, 2.0, rtol=1e-12)

    def test_safety_linear(self, grid):
        th = sine_gaussian(grid, amplitude=0.2)
        assert np.isclose(cfl_dt(th, 0.5, 1e9), 0.5 * cfl_dt(th, 1.0, 1e9),
                          rtol=1e-12)


class TestStepRK4:
    def test_zero_state_fixed(self, grid, affine):
        st = SimulationState(zero(grid), 0.0, 0)
        out = step_rk4(st, 0.1, affine)
        assert out.theta.l2() == 0.0
        assert out.t == 0.1 and out.step_count == 1

    def test_fourth_order_convergence(self, grid, affine):
        # linear-only stepping against the exact semigroup: halving dt ~ 16x
        th0 = sine_gaussian(grid, amplitude=0.1)
        exact = evolve_exact(LinearState(th0, 0.0), 1.0).theta

        def err(dt):
            st = SimulationState(dealias(th0), 0.0, 0)
            n = round(1.0 / dt)
            for _ in range(n):
                st = step_rk4(st, dt, affine, advection=False)
            return np.linalg.norm(st.theta.coeffs - exact.coeffs)

        e1, e2 = err(0.2), err(0.1)
        assert 10 < e1 / e2 < 22

    def test_energy_decreases_over_step(self, grid, affine):
        th0 = sine_gaussian(grid, amplitude=0.1)
        st = SimulationState(dealias(th0), 0.0, 0)

        def energy_proxy(state):
            vals = inverse(state.theta).values
            return grid.cell_area * np.sum(vals * grid.x2[:, None])

        before = energy_proxy(st)
        after = energy_proxy(step_rk4(st, 0.05, affine))
        assert after < before

    def test_hermitian_and_band_preserved(self, grid, affine):
        th0 = sine_gaussian(grid, amplitude=0.1)
        st = step_rk4(SimulationState(dealias(th0), 0.0, 0), 0.1, affine)
        assert st.theta.is_hermitian(tol=1e-10)
        assert np.all(st.theta.coeffs[~grid.dealias_mask] == 0)

    def test_rejects_nonpositive_dt(self, grid, affine):
        with pytest.raises(ValueError):
            step_rk4(SimulationState(zero(grid), 0.0, 0), 0.0, affine)


def small_config(grid, affine, **kw):
    defaults = dict(grid=grid, profile=affine, k=3.0, t_end=2.0,
                    cfl_safety=0.4, dt_max=0.1, snapshot_cadence=1.0,
                    diagnostic_cadence=0.1)
    defaults.update(kw)
    return SolverConfig(**defaults)


class TestRun:
    def test_zero_data(self, grid, affine):
        traj = run(small_config(grid, affine), zero(grid))
        s = traj.series
        for name in ("l2_theta", "l2_u", "energy_E"):
            assert np.max(np.abs(s[name])) == 0.0
        assert traj.manifest["status"] == "completed"
        assert not traj.manifest["boundary_margin_violation"]

    def test_linear_only_matches_exact(self, grid, affine):
        th0 = sine_gaussian(grid, amplitude=0.05)
        cfg = small_config(grid, affine, include_advection=False, t_end=1.0,
                           dt_max=1e-3, track_rearrangement=False)
        traj = run(cfg, th0)
        final = traj.snapshots[-1]
        exact = evolve_exact(LinearState(dealias(th0), 0.0), final.t).theta
        rel = np.linalg.norm(final.theta.coeffs - exact.coeffs) / exact.l2()
        assert rel < 1e-9

    def test_mean_mode_conserved(self, grid, affine):
        X1, X2 = grid.mesh()
        vals = 0.05 * np.sin(X1) * np.exp(-X2 ** 2) + 0.01 * np.exp(-X2 ** 2)
        th0 = dealias(forward(RealField(grid, vals)))
        cfg = small_config(grid, affine, track_rearrangement=False)
        traj = run(cfg, th0)
        final = traj.snapshots[-1].theta
        assert np.isclose(final.mean_mode().real, th0.mean_mode().real,
                          rtol=0, atol=1e-13 * abs(th0.mean_mode().real))

    def test_snapshots_and_series_timing(self, grid, affine):
        cfg = small_config(grid, affine, track_rearrangement=False)
        traj = run(cfg, sine_gaussian(grid, amplitude=0.05))
        times = [s.t for s in traj.snapshots]
        assert times[0] == 0.0
        assert np.all(np.diff(times) > 0)
        assert abs(traj.series.times[-1] - cfg.t_end) < 1e-9
        dtick = np.diff(traj.series.times)
        assert np.allclose(dtick, cfg.diagnostic_cadence, atol=1e-9)

    def test_energy_identity_small_run(self, grid, affine):
        from ipmlab import energy_balance
        cfg = small_config(grid, affine, t_end=4.0, diagnostic_cadence=0.02)
        traj = run(cfg, sine_gaussian(grid, amplitude=0.05))
        assert energy_balance(traj.series) < 1e-3

    def test_hk_recorded_and_bounded(self, grid, affine):
        cfg = small_config(grid, affine, t_end=2.0)
        traj = run(cfg, sine_gaussian(grid, amplitude=0.05))
        hk = traj.series["hk_theta"]
        assert traj.manifest["theta0_hk"] > 0
        assert np.max(hk) <= 1.1 * hk[0]

    def test_blowup_guard_aborts(self, grid, affine):
        th0 = sine_gaussian(grid, amplitude=2e6)
        cfg = small_config(grid, affine, track_rearrangement=False)
        traj = run(cfg, th0)
        assert traj.manifest["status"] == "aborted"
        assert "H^k" in traj.manifest["abort_reason"]
        assert len(traj.snapshots) >= 1

    def test_margin_violation_flagged(self, grid, affine):
        X1, X2 = grid.mesh()
        vals = 0.01 * np.sin(X1) * np.exp(-((X2 - 0.95 * L) / 0.5) ** 2)
        th0 = dealias(forward(RealField(grid, vals)))
        cfg = small_config(grid, affine, t_end=0.2, track_rearrangement=False)
        traj = run(cfg, th0)
        assert traj.manifest["boundary_margin_violation"]

    def test_deterministic(self, grid, affine):
        cfg = small_config(grid, affine, t_end=1.0, track_rearrangement=False)
        a = run(cfg, sine_gaussian(grid, amplitude=0.05))
        b = run(cfg, sine_gaussian(grid, amplitude=0.05))
        for name in a.series.columns:
            assert np.array_equal(a.series[name], b.series[name])

    def test_rearrangement_column_present(self, grid, affine):
        cfg = small_config(grid, affine, t_end=0.5)
        traj = run(cfg, sine_gaussian(grid, amplitude=0.05))
        assert traj.series.has("l2_rho_minus_rhostar")
        assert traj.manifest["initial_potential_energy"] > 0
