"""Scalar time series, time-averaged decay functionals, power-law fits, and
the energy-balance residual.

Decay claims for the nonlinear flow hold in the time-averaged sense
f_avg(t) = (2/t) * int_{t/2}^t f(s) ds, so decay fits operate on the averaged
series by default; raw-series fits are available for the pointwise linear
claims. Fit windows exclude the early transient (t < 5) and the final 10%
of the run, where domain truncation can contaminate the tail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLUMN_NAMES = (
    "l2_theta", "hk_theta", "l2_u", "h2_u", "h2_u2",
    "grad_linf_u2", "energy_E", "l2_rho_minus_rhostar",
)


@dataclass
class NormSeries:
    """Time-ordered diagnostic series from a run.

    times is strictly increasing; every column has the same length. Norm
    columns are nonnegative; energy_E may carry tiny negative round-off once
    the run has decayed to the numerical floor.
    """
    times: np.ndarray
    columns: dict
    k: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1:
            raise ValueError("times must be 1D")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=np.float64)
            if col.shape != self.times.shape:
                raise ValueError(f"column {name!r} length mismatch")
            self.columns[name] = col

    def __getitem__(self, name):
        return self.columns[name]

    def has(self, name) -> bool:
        return name in self.columns


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit y ~ prefactor * t^exponent over a time window."""
    exponent: float
    prefactor: float
    window: tuple
    r_squared: float
    averaged: bool
    n_samples: int = 0

    def __post_init__(self):
        if self.window[0] < 1:
            raise ValueError(f"fit window must start at t >= 1, got {self.window[0]}")
        if self.n_samples and self.n_samples < 10:
            raise ValueError(f"fit window holds {self.n_samples} samples, need >= 10")


def time_average(times, values, t: float) -> float:
    """Trapezoidal (2/t) * int_{t/2}^t of a sampled series.

    Endpoint values at t/2 and t are linearly interpolated when they fall
    between samples.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    lo, hi = t / 2.0, t
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12:
        raise ValueError(f"window [{lo}, {hi}] not covered by samples "
                         f"[{times[0]}, {times[-1]}]")
    inside = (times > lo) & (times < hi)
    ts = np.concatenate(([lo], times[inside], [hi]))
    ys = np.concatenate(([np.interp(lo, times, values)],
                         values[inside],
                         [np.interp(hi, times, values)]))
    if len(ts) < 2:
        raise ValueError("insufficient samples in averaging window")
    return float(np.trapezoid(ys, ts) / (t / 2.0))


def averaged_series(times, values, window=None):
    """Time-averaged series evaluated at every sample t with t/2 in range."""
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    mask = times / 2.0 >= times[0] - 1e-12
    mask &= times > times[0]
    if window is not None:
        mask &= (times >= window[0]) & (times <= window[1])
    ts = times[mask]
    ys = np.array([time_average(times, values, t) for t in ts])
    return ts, ys


def fit_power_law(times, values, window, averaged: bool = False) -> DecayFit:
    """Ordinary least squares of log y against log t over the window.

    With averaged=True the series is first replaced by its running
    time-average in the sense of the decay claims. All values inside the
    window must be positive.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if averaged:
        ts, ys = averaged_series(times, values)
    else:
        ts, ys = times, values
    lo, hi = window
    mask = (ts >= lo) & (ts <= hi)
    ts, ys = ts[mask], ys[mask]
    if len(ts) < 2:
        raise ValueError(f"degenerate fit window {window}: {len(ts)} samples")
    if np.any(ys <= 0):
        raise ValueError("nonpositive values in fit window")
    lt, ly = np.log(ts), np.log(ys)
    A = np.vstack([lt, np.ones_like(lt)]).T
    sol, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = sol
    resid = ly - (slope * lt + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(exponent=float(slope), prefactor=float(np.exp(intercept)),
                    window=(float(lo), float(hi)), r_squared=float(min(r2, 1.0)),
                    averaged=averaged, n_samples=len(ts))


def energy_balance(series: NormSeries) -> float:
    """Residual of dE/dt = -||u||_{L2}^2 over dyadic subintervals.

    Returns max over windows [T/2^(j+1), T/2^j] (plus the full interval) of
    |Delta E + int ||u||^2 dt| / max(int ||u||^2 dt, 1e-14), with trapezoidal
    time quadrature of the sampled series.
    """
    for name in ("energy_E", "l2_u"):
        if not series.has(name):
            raise ValueError(f"series lacks required column {name!r}")
    t = series.times
    E = series["energy_E"]
    usq = series["l2_u"] ** 2
    T = t[-1]

    def window_residual(a, b):
        mask = (t >= a - 1e-12) & (t <= b + 1e-12)
        if mask.sum() < 2:
            return None
        tw, Ew, uw = t[mask], E[mask], usq[mask]
        dissip = float(np.trapezoid(uw, tw))
        dE = float(Ew[-1] - Ew[0])
        return abs(dE + dissip) / max(dissip, 1e-14)

    residuals = []
    r = window_residual(t[0], T)
    if r is not None:
        residuals.append(r)
    j = 0
    while True:
        a, b = T / 2 ** (j + 1), T / 2 ** j
        r = window_residual(a, b)
        if r is None:
            break
        residuals.append(r)
        j += 1
        if a <= t[0] or j > 60:
            break
    return max(residuals) if residuals else 0.0


def default_fit_window(times):
    """Transient- and tail-trimmed window: [max(5, t0), 0.9 * t_end]."""
    t0 = max(5.0, float(times[0]))
    t1 = 0.9 * float(times[-1])
    return (t0, t1)


def _widest_clean_fit(times, values, t_lo, t_hi, averaged, min_r2=0.98):
    """Largest window [t_lo, T] with T <= t_hi whose fit has R^2 >= min_r2.

    Scans candidate right endpoints from t_hi downward; used to exclude the
    late-time stretch where a decayed series sits on its numerical floor.
    Falls back to the best-R^2 candidate if none reaches min_r2.
    """
    candidates = np.geomspace(max(t_lo * 2.0, t_lo + 1.0), t_hi, 12)[::-1]
    best = None
    for T in candidates:
        try:
            f = fit_power_law(times, values, (t_lo, T), averaged=averaged)
        except ValueError:
            continue
        if f.n_samples < 10:
            continue
        if f.r_squared >= min_r2:
            return f
        if best is None or f.r_squared > best.r_squared:
            best = f
    return best


def decay_report(series: NormSeries, k: float) -> dict:
    """Fitted vs predicted decay exponents for the nonlinear run.

    Fits the averaged series of the potential energy, ||u||_{L2}^2,
    ||u||_{H2}^2, t ||u2||_{H2}^2 and ||rho - rho0*||_{L2}^2; the predictions
    are -k, -(k+1), -(k-1), -(k-1) and -k. Also reports the running integral
    of ||grad u2||_{Linf} and whether it plateaus (final-quarter increase
    below 5% of the total).
    """
    t = series.times
    t_lo, t_hi = default_fit_window(t)
    targets = []
    if series.has("energy_E"):
        targets.append(("energy_E", series["energy_E"], -k))
    if series.has("l2_u"):
        targets.append(("avg_l2_u_sq", series["l2_u"] ** 2, -(k + 1)))
    if series.has("h2_u"):
        targets.append(("avg_h2_u_sq", series["h2_u"] ** 2, -(k - 1)))
    if series.has("h2_u2"):
        targets.append(("avg_t_h2_u2_sq", t * series["h2_u2"] ** 2, -(k - 1)))
    if series.has("l2_rho_minus_rhostar"):
        targets.append(("l2_rho_minus_rhostar_sq",
                        series["l2_rho_minus_rhostar"] ** 2, -k))

    fits = {}
    for name, vals, predicted in targets:
        entry = {"predicted": predicted, "status": "ok"}
        if np.max(np.abs(vals)) == 0.0:
            entry["status"] = "identically zero"
            fits[name] = entry
            continue
        f = _widest_clean_fit(t, np.abs(vals), t_lo, t_hi, averaged=True)
        if f is None:
            entry["status"] = "fit failed"
        else:
            entry.update(exponent=f.exponent, prefactor=f.prefactor,
                         window=list(f.window), r_squared=f.r_squared,
                         averaged=f.averaged, n_samples=f.n_samples)
        fits[name] = entry

    report = {"k": k, "fit_window": [t_lo, t_hi], "fits": fits}

    if series.has("grad_linf_u2"):
        g = series["grad_linf_u2"]
        running = np.concatenate(([0.0], np.cumsum(
            0.5 * (g[1:] + g[:-1]) * np.diff(t))))
        total = float(running[-1])
        if total > 0:
            i_q = int(np.searchsorted(t, t[0] + 0.75 * (t[-1] - t[0])))
            i_q = min(i_q, len(t) - 1)
            final_quarter = float(running[-1] - running[i_q])
            report["grad_u2_integral"] = {
                "total": total,
                "final_quarter_fraction": final_quarter / total,
                "plateau": bool(final_quarter / total < 0.05),
            }
        else:
            report["grad_u2_integral"] = {
                "total": 0.0, "final_quarter_fraction": 0.0, "plateau": True}
    return report
