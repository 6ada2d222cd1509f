"""Scenario-driven batch runner.

Usage: ipmlab SUBCOMMAND --config scenario.yaml --out DIR [--seed N] [--threads N]

Subcommands: linear-decay, sharpness, simulate, stratify. The scenario file
is flat YAML (sections of plain keys, no deeper nesting); unknown sections or
keys are rejected so typos fail loudly. Exit codes: 0 pass, 1 check failure,
2 config error, 3 runtime abort.

Every run directory receives a manifest.json (written atomically, also on
abort) echoing the config, the code version, the grid and normalization
conventions, wall time, per-check pass/fail, and the file inventory. CSV
output uses shortest round-trip float formatting, so identical config + seed
reproduces bit-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import __version__, families, snapshots
from .diagnostics import NormSeries, decay_report, energy_balance, fit_power_law
from .grid import Grid, RealField, forward, inverse
from .linear import (LinearState, SharpnessSpec, evolve_exact, grid_norm_squared,
                     linear_norm_oracle, sharpness_data,
                     sharpness_lower_bound_constant)
from .solver import BlowUpError, SolverConfig, StratifiedProfile, run
from .stratify import LevelGrid, MonotonicityError, decompose, energy_report

MODES = ("linear_decay", "sharpness", "simulate", "stratify")

CONVENTIONS = {
    "domain": "[0, 2*pi) x [-L, L), periodic; xi = pi*m/L",
    "transform_normalization": "unitary: coeffs = fft2(values) * sqrt(4*pi*L)/(n1*n2)",
    "h0_norm": "H^0 = sqrt(2) * L2 (zero-order seminorm duplicates L2)",
    "dealias": "2/3 rule, modes with |n| > n1/3 or |m| > n2/3 zeroed",
    "sharpness_cutoff": "grid indicator keeps |xi| >= 1 - dxi/2 (half-cell)",
    "oracle_bands": "ideal = [1, inf); grid = the band the grid carries",
}


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "mode": None,
    "grid": {"n1": int, "n2": int, "L": (int, float)},
    "profile": {"kind": str, "coeffs": list},
    "initial": {"family": str, "amplitude": (int, float), "width": (int, float),
                "rough_amplitude": (int, float), "rough_eps": (int, float),
                "path": str, "seed": int},
    "time": {"t_end": (int, float), "dt_max": (int, float),
             "cfl_safety": (int, float), "snapshot_cadence": (int, float),
             "diagnostic_cadence": (int, float), "boundary_margin": (int, float)},
    "study": {"k": (int, float), "eps": (int, float), "t_min": (int, float),
              "t_max": (int, float), "n_points": int,
              "fit_t_min": (int, float), "fit_t_max": (int, float)},
    "levels": {"margin_fraction": (int, float), "n_levels": int},
    "output": {"write_snapshots": bool},
}


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must be a mapping of sections")
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section {section!r}")
        if section == "mode":
            if content not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {content!r}")
            continue
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in content.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            if not isinstance(value, _SCHEMA[section][key]):
                raise ConfigError(
                    f"{section}.{key} has wrong type {type(value).__name__}")
    if "mode" not in raw:
        raise ConfigError("missing required key 'mode'")
    return raw


def _need(cfg, section, key, default=None):
    try:
        return cfg[section][key]
    except KeyError:
        if default is not None:
            return default
        raise ConfigError(f"missing required key {section}.{key}") from None


def build_grid(cfg) -> Grid:
    try:
        return Grid(_need(cfg, "grid", "n1"), _need(cfg, "grid", "n2"),
                    float(_need(cfg, "grid", "L")))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def build_profile(cfg, grid) -> StratifiedProfile:
    kind = _need(cfg, "profile", "kind", "affine") if "profile" in cfg else "affine"
    try:
        if kind == "affine":
            return StratifiedProfile.affine(grid)
        if kind == "affine_plus_periodic":
            return StratifiedProfile.affine_plus_periodic(
                grid, _need(cfg, "profile", "coeffs"))
    except ValueError as exc:
        raise ConfigError(f"profile: {exc}") from exc
    raise ConfigError(f"profile.kind must be affine or affine_plus_periodic, got {kind!r}")


def build_initial(cfg, grid, seed, k=None):
    family = _need(cfg, "initial", "family")
    init = cfg.get("initial", {})
    if family == "zero":
        return families.zero(grid)
    if family == "sine_gaussian":
        return families.sine_gaussian(grid, init.get("amplitude", 0.05),
                                      init.get("width", 1.0))
    if family == "bump_plus_rough":
        if k is None:
            raise ConfigError("bump_plus_rough requires study.k")
        return families.bump_plus_rough(grid, k, init.get("amplitude", 0.05),
                                        init.get("rough_amplitude", 1e-2),
                                        init.get("rough_eps", 0.25),
                                        init.get("width", 1.0))
    if family == "random_blobs":
        return families.random_blobs(grid, seed, init.get("amplitude", 0.1))
    if family == "sharpness":
        if k is None:
            raise ConfigError("sharpness family requires study.k")
        eps = float(_need(cfg, "study", "eps"))
        try:
            return sharpness_data(SharpnessSpec(k=k, eps=eps, grid=grid))
        except ValueError as exc:
            raise ConfigError(f"initial: {exc}") from exc
    if family == "snapshot":
        field, _, _ = snapshots.read_snapshot(_need(cfg, "initial", "path"))
        if field.grid != grid:
            raise ConfigError("snapshot grid does not match scenario grid")
        return forward(field)
    raise ConfigError(f"unknown initial.family {family!r}")


def fmt(x) -> str:
    """Deterministic shortest round-trip float formatting."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


class Manifest:
    def __init__(self, out_dir, mode, cfg, seed, threads):
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {
            "mode": mode,
            "config": cfg,
            "version": __version__,
            "conventions": CONVENTIONS,
            "seed": seed,
            "threads": threads,
            "status": "running",
            "checks": {},
            "files": [],
            "wall_time_s": None,
        }
        self._t0 = time.monotonic()

    def add_file(self, name):
        if name not in self.data["files"]:
            self.data["files"].append(name)

    def finish(self, status):
        self.data["status"] = status
        self.data["wall_time_s"] = time.monotonic() - self._t0
        write_json(self.path, self.data)


ORACLE_PREDICTIONS = {
    "L2": lambda k, eps: -(k + 2 * eps),
    "H2_of_U": lambda k, eps: -(k - 1 + 2 * eps),
    "H2_of_U2": lambda k, eps: -(k + 2 * eps),
}


def _study_params(cfg):
    k = float(_need(cfg, "study", "k"))
    eps = float(_need(cfg, "study", "eps"))
    t_min = float(_need(cfg, "study", "t_min", 1.0))
    t_max = float(_need(cfg, "study", "t_max", 1000.0))
    n_points = int(_need(cfg, "study", "n_points", 25))
    if t_min < 1.0:
        raise ConfigError("study.t_min below 1 is rejected (decay bounds need t >= 1)")
    if not t_max > t_min:
        raise ConfigError("study.t_max must exceed study.t_min")
    return k, eps, t_min, t_max, n_points


def _fit_window(cfg, t_min, t_max):
    lo = float(_need(cfg, "study", "fit_t_min", max(100.0, t_min)))
    hi = float(_need(cfg, "study", "fit_t_max", t_max))
    return lo, hi


def _oracle_series(spec, ts, quantity, band, threads):
    def one(t):
        return linear_norm_oracle(spec, t, quantity, band=band)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, ts)))
    return np.array([one(t) for t in ts])


def cmd_linear_decay(cfg, out_dir, seed, threads, manifest) -> int:
    """Exact linear evolution on the grid vs the band-matched 1D oracle."""
    grid = build_grid(cfg)
    k, eps, t_min, t_max, n_points = _study_params(cfg)
    try:
        spec = SharpnessSpec(k=k, eps=eps, grid=grid)
    except ValueError as exc:
        raise ConfigError(f"study: {exc}") from exc
    theta0 = build_initial(cfg, grid, seed, k=k)
    zero_data = float(np.max(np.abs(theta0.coeffs))) == 0.0

    ts = np.geomspace(t_min, t_max, n_points)
    rows = []
    series = {q: [] for q in ORACLE_PREDICTIONS}
    state0 = LinearState(theta0, 0.0)
    worst_mismatch = 0.0
    for t in ts:
        evolved = evolve_exact(state0, float(t)).theta
        for q in ORACLE_PREDICTIONS:
            gv = grid_norm_squared(evolved, q, grid)
            ov = linear_norm_oracle(spec, float(t), q, band="grid")
            rows.append((float(t), q, gv, ov))
            series[q].append(gv)
            if not zero_data and ov > 0:
                worst_mismatch = max(worst_mismatch, abs(gv - ov) / ov)

    csv_path = os.path.join(out_dir, "decay_study.csv")
    write_csv(csv_path, ("t", "quantity", "grid_value", "oracle_value"), rows)
    manifest.add_file("decay_study.csv")

    report = {"k": k, "eps": eps, "t_grid": ts.tolist(),
              "oracle_band": "grid", "worst_mismatch": worst_mismatch,
              "mismatch_tolerance": 0.02, "quantities": {}}
    lo, hi = _fit_window(cfg, t_min, t_max)
    for q, vals in series.items():
        predicted = ORACLE_PREDICTIONS[q](k, eps)
        entry = {"predicted": predicted}
        if zero_data:
            entry["status"] = "identically zero"
        else:
            try:
                f = fit_power_law(ts, np.array(vals), (lo, hi))
                entry.update(status="ok", exponent=f.exponent,
                             prefactor=f.prefactor, window=list(f.window),
                             r_squared=f.r_squared)
            except ValueError as exc:
                entry["status"] = f"fit failed: {exc}"
        report["quantities"][q] = entry

    passed = zero_data or worst_mismatch <= 0.02
    report["passed"] = bool(passed)
    manifest.data["checks"]["oracle_mismatch_le_2pct"] = bool(passed)
    write_json(os.path.join(out_dir, "report.json"), report)
    manifest.add_file("report.json")
    return 0 if passed else 1


def cmd_sharpness(cfg, out_dir, seed, threads, manifest) -> int:
    """1D-oracle decay study with the explicit lower-bound check."""
    grid = build_grid(cfg)
    k, eps, t_min, t_max, n_points = _study_params(cfg)
    try:
        spec = SharpnessSpec(k=k, eps=eps, grid=grid)
    except ValueError as exc:
        raise ConfigError(f"study: {exc}") from exc
    C = sharpness_lower_bound_constant(k)
    alpha = k + 2 * eps

    ts = np.geomspace(t_min, t_max, n_points)
    rows = []
    series = {}
    for q in ORACLE_PREDICTIONS:
        series[q] = _oracle_series(spec, ts, q, "ideal", threads)
    min_margin = math.inf
    bound_ok = True
    for i, t in enumerate(ts):
        lower = C * float(t) ** (-alpha)
        margin = series["L2"][i] / lower
        min_margin = min(min_margin, margin)
        bound_ok &= series["L2"][i] >= lower
        for q in ORACLE_PREDICTIONS:
            rows.append((float(t), q, float(series[q][i]),
                         lower if q == "L2" else ""))

    csv_path = os.path.join(out_dir, "sharpness_study.csv")
    write_csv(csv_path, ("t", "quantity", "oracle_value", "lower_bound"), rows)
    manifest.add_file("sharpness_study.csv")

    lo, hi = _fit_window(cfg, t_min, t_max)
    report = {"k": k, "eps": eps, "lower_bound_constant": C,
              "lower_bound_passed": bool(bound_ok), "lower_bound_min_margin":
              min_margin, "t_grid": ts.tolist(), "quantities": {}}
    for q, vals in series.items():
        entry = {"predicted": ORACLE_PREDICTIONS[q](k, eps)}
        try:
            f = fit_power_law(ts, vals, (lo, hi))
            entry["fit"] = {"exponent": f.exponent, "prefactor": f.prefactor,
                            "window": list(f.window), "r_squared": f.r_squared}
        except ValueError as exc:
            entry["fit"] = {"status": f"fit failed: {exc}"}
        wide_lo, wide_hi = 10.0, 1000.0
        if ts[0] <= wide_lo < ts[-1]:
            try:
                fs = fit_power_law(ts, vals, (wide_lo, min(wide_hi, float(ts[-1]))))
                entry["fit_wide_window"] = {
                    "exponent": fs.exponent, "window": list(fs.window),
                    "r_squared": fs.r_squared,
                    "note": "pre-asymptotic bias; see README on fit windows"}
            except ValueError:
                pass
        report["quantities"][q] = entry

    report["passed"] = bool(bound_ok)
    manifest.data["checks"]["lower_bound_at_every_t"] = bool(bound_ok)
    write_json(os.path.join(out_dir, "report.json"), report)
    manifest.add_file("report.json")
    return 0 if bound_ok else 1


def cmd_simulate(cfg, out_dir, seed, threads, manifest) -> int:
    """Nonlinear run with diagnostics CSV, decay report, and snapshots."""
    grid = build_grid(cfg)
    profile = build_profile(cfg, grid)
    k = float(_need(cfg, "study", "k", 3.0))
    theta0 = build_initial(cfg, grid, seed, k=k)
    tc = cfg.get("time", {})
    try:
        solver_cfg = SolverConfig(
            grid=grid, profile=profile, k=k,
            t_end=float(_need(cfg, "time", "t_end")),
            cfl_safety=float(tc.get("cfl_safety", 0.4)),
            dt_max=float(tc.get("dt_max", 0.05)),
            snapshot_cadence=float(tc.get("snapshot_cadence", 10.0)),
            diagnostic_cadence=float(tc.get("diagnostic_cadence", 0.05)),
            boundary_margin=float(tc.get("boundary_margin", 0.1)))
    except ValueError as exc:
        raise ConfigError(f"time: {exc}") from exc

    traj = run(solver_cfg, theta0)
    s = traj.series

    header = ["time"] + list(s.columns)
    rows = [[t] + [float(s[c][i]) for c in s.columns]
            for i, t in enumerate(s.times.tolist())]
    write_csv(os.path.join(out_dir, "diagnostics.csv"), header, rows)
    manifest.add_file("diagnostics.csv")

    if cfg.get("output", {}).get("write_snapshots", True):
        snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for st in traj.snapshots:
            name = f"theta_t{st.t:012.6f}.snap"
            snapshots.write_snapshot(os.path.join(snap_dir, name),
                                     inverse(st.theta), st.t, "theta")
            manifest.add_file(os.path.join("snapshots", name))

    report = decay_report(s, k)
    resid = energy_balance(s)
    sub = NormSeries(s.times[::2], {c: v[::2] for c, v in s.columns.items()}, k=k)
    resid_coarse = energy_balance(sub)
    report["energy_balance"] = {
        "residual": resid, "residual_at_doubled_cadence": resid_coarse,
        "cadence_halving_ratio": resid_coarse / resid if resid > 0 else None}
    report["run"] = dict(traj.manifest)
    write_json(os.path.join(out_dir, "report.json"), report)
    manifest.add_file("report.json")

    manifest.data["checks"]["completed"] = traj.manifest["status"] == "completed"
    manifest.data["checks"]["boundary_margin_ok"] = \
        not traj.manifest["boundary_margin_violation"]
    if traj.manifest["status"] == "aborted":
        manifest.data["abort_reason"] = traj.manifest["abort_reason"]
        return 3
    return 0


def cmd_stratify(cfg, out_dir, seed, threads, manifest) -> int:
    """Level-set decomposition and potential-energy report of one field."""
    grid = build_grid(cfg)
    profile = build_profile(cfg, grid)
    theta = build_initial(cfg, grid, seed,
                          k=float(_need(cfg, "study", "k", 3.0)))
    rho = profile.rho_field(inverse(theta))
    margin_fraction = float(cfg.get("levels", {}).get("margin_fraction", 0.1))
    n_levels = cfg.get("levels", {}).get("n_levels")
    levels = LevelGrid.auto(rho, margin_fraction, n_levels)
    dec = decompose(rho, levels, background=profile.rho_samples)
    rep = energy_report(rho, levels, background=profile.rho_samples, dec=dec)

    h_rms = np.sqrt(np.mean(dec.h ** 2, axis=1))
    h_max = np.max(np.abs(dec.h), axis=1)
    rows = list(zip(levels.s_values.tolist(), dec.phi0.tolist(),
                    h_rms.tolist(), h_max.tolist()))
    write_csv(os.path.join(out_dir, "decomposition.csv"),
              ("s", "phi0", "h_rms", "h_max"), rows)
    manifest.add_file("decomposition.csv")

    with open(os.path.join(out_dir, "h.bin"), "wb") as fh:
        fh.write(dec.h.astype("<f8").tobytes())
    manifest.add_file("h.bin")

    write_csv(os.path.join(out_dir, "fstar_profile.csv"), ("x2", "f_star"),
              list(zip(grid.x2.tolist(), dec.f_star.tolist())))
    manifest.add_file("fstar_profile.csv")

    payload = {"energy_h": rep.energy_h, "energy_direct": rep.energy_direct,
               "l2_gap": rep.l2_gap, "ratio_lower": rep.ratio_lower,
               "ratio_upper": rep.ratio_upper, "gamma_emp": dec.gamma_emp,
               "h_shape": list(dec.h.shape),
               "s_range": [float(levels.s_values[0]), float(levels.s_values[-1])],
               "agreement": abs(rep.energy_h - rep.energy_direct)
               <= max(1e-6, 0.02 * abs(rep.energy_h))}
    write_json(os.path.join(out_dir, "energy_report.json"), payload)
    manifest.add_file("energy_report.json")

    manifest.data["checks"]["oracle_agreement"] = bool(payload["agreement"])
    return 0 if payload["agreement"] else 1


COMMANDS = {
    "linear-decay": ("linear_decay", cmd_linear_decay),
    "sharpness": ("sharpness", cmd_sharpness),
    "simulate": ("simulate", cmd_simulate),
    "stratify": ("stratify", cmd_stratify),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ipmlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    mode, fn = COMMANDS[args.command]
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, mode, {}, args.seed, args.threads)
    try:
        cfg = load_config(args.config)
        manifest.data["config"] = cfg
        if cfg["mode"] != mode:
            raise ConfigError(f"config mode {cfg['mode']!r} does not match "
                              f"subcommand {args.command!r}")
        code = fn(cfg, args.out, args.seed, args.threads, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.finish("config_error")
        return 2
    except (BlowUpError, MonotonicityError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        manifest.finish("aborted")
        return 3
    if code == 0:
        manifest.finish("completed")
    elif code == 1:
        manifest.finish("check_failed")
    else:
        manifest.finish("aborted")
    return code


if __name__ == "__main__":
    sys.exit(main())
