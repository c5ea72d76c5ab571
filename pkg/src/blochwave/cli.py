"""Configuration-driven command line front end.

Subcommands: profile | spectrum | check | simulate | whitham.  Each run
validates the JSON config against the packaged schema, materializes all
defaults, writes the materialized config next to the outputs, and emits
plain data files (CSV / JSON); plotting is left to external tools.

Exit codes: 0 success / all requested conditions pass, 2 a condition or run
failed, 3 inconclusive (resolution problems), 64 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_INCONCLUSIVE = 3
EXIT_CONFIG = 64

_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "grids": {"n_xi": 255, "n_fourier": 64, "n_fourier2": None,
              "n_cells": 64, "pts_per_cell": 64},
    "check": {"conditions": ["d1", "d2"], "zero_radius": 1e-4,
              "margin_floor": 1e-8, "theta_floor": 1e-8,
              "imag_axis_tol": 1e-6, "slope_gap_tol": 1e-6,
              "expansion_n_fourier": 48},
    "simulate": {"kind": "linear",
                 "times": {"start": 1.0, "stop": 100.0, "count": 16,
                           "spacing": "geometric"},
                 "dt": 1e-3,
                 "data": {"shape": "gaussian", "width_cells": 4.0,
                          "amplitude": 1.0, "zero_mean": False,
                          "component": 0},
                 "norms": ["L2", "Linf"],
                 "sm_norm": None,
                 "fit_window": None},
    "whitham": {"spans": None, "counts": 4, "nu_art": 0.05, "times": None,
                "solve_report_tol": 1e-8},
}


class ConfigError(Exception):
    pass


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    import importlib.resources as ir

    import jsonschema

    with ir.files("blochwave").joinpath("data/config_schema.json").open() as fh:
        schema = json.load(fh)
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}")
    full = copy.deepcopy(_DEFAULTS)

    def merge(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                merge(dst[k], v)
            else:
                dst[k] = v

    merge(full, cfg)
    return full


def _build_system(cfg):
    from . import systems

    sc = cfg["system"]
    if sc["kind"] == "kdv":
        return systems.kdv_system()
    preset = sc.get("preset", "heat")
    if preset == "heat":
        d = len(sc.get("advection", [[0.0]]))
        return systems.heat_system(
            d=d, diffusion=sc.get("diffusion"), advection=sc.get("advection"))
    if preset == "coupled_center":
        return systems.coupled_center_system(diffusion=sc.get("diffusion"))
    if preset == "burgers":
        D = sc.get("diffusion", [[1.0]])
        return systems.burgers_system(viscosity=D[0][0])
    raise ConfigError(f"unknown parabolic preset {preset!r}")


def _build_wave(cfg, system):
    from . import profiles

    wc = cfg["wave"]
    if wc["type"] == "cnoidal":
        if system.kind != "kdv":
            raise ConfigError("cnoidal waves belong to the KdV system")
        return profiles.cnoidal_closed_form(
            wc["modulus"], wc.get("mean", 0.0), wc["amplitude"],
            n_modes=wc.get("n_modes", 48),
            residual_tol=wc.get("residual_tol", 1e-10))
    if wc["type"] == "file":
        return profiles.load_profile(wc["path"])
    if wc["type"] == "constant":
        mean = np.atleast_1d(np.asarray(wc.get("mean", 0.0), dtype=float))
        k = wc.get("k", 1.0)
        om = wc.get("omega", 0.0)
        n_modes = wc.get("n_modes", 8)
        coeffs = np.zeros((system.d, 2 * n_modes + 1), dtype=complex)
        coeffs[:, n_modes] = mean
        if system.kind == "kdv":
            params, names = np.array([mean[0], 0.5 * mean[0] ** 2]), ("M", "P")
            q = np.array([om * mean[0] + 0.5 * k * mean[0] ** 2])
        else:
            params = mean
            names = tuple(f"M{i+1}" for i in range(system.d))
            q = om * mean + k * system.eval_flux(mean)
        return profiles.WaveProfile(system.kind, system.d, coeffs, k, om,
                                    params, names, q, residual=0.0,
                                    degenerate=True)
    raise ConfigError(f"unknown wave type {wc['type']!r}")


def _times_array(tc):
    if tc["spacing"] == "geometric":
        return np.geomspace(tc["start"], tc["stop"], tc["count"])
    return np.linspace(tc["start"], tc["stop"], tc["count"])


def _write_config(cfg, outdir):
    with open(outdir / "config.used.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def _prepare(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    outdir = Path(args.out or cfg.get("out", "out"))
    outdir.mkdir(parents=True, exist_ok=True)
    cfg["out"] = str(outdir)
    system = _build_system(cfg)
    wave = _build_wave(cfg, system)
    _write_config(cfg, outdir)
    return cfg, outdir, system, wave


def cmd_profile(args):
    from .profiles import residual_collocation, save_profile

    cfg, outdir, system, wave = _prepare(args)
    save_profile(wave, outdir / "profile.json")
    recomputed = residual_collocation(system, wave)
    report = {
        "k": wave.k, "omega": wave.omega, "speed": wave.speed,
        "params": dict(zip(wave.param_names, wave.params.tolist())),
        "residual_solver": None if np.isnan(wave.residual) else wave.residual,
        "residual_collocation": recomputed,
        "degenerate": wave.degenerate,
    }
    with open(outdir / "profile_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"profile written to {outdir}/profile.json "
          f"(collocation residual {recomputed:.3e}"
          f"{', degenerate (constant)' if wave.degenerate else ''})")
    return EXIT_OK


def cmd_spectrum(args):
    from . import floquet as fl

    cfg, outdir, system, wave = _prepare(args)
    g = cfg["grids"]
    if g["n_xi"] < 3:
        raise ConfigError("spectrum needs at least 3 Floquet samples")
    grid = fl.symmetric_xi_grid(g["n_xi"])
    spec = fl.sweep(system, wave, grid, g["n_fourier"], g["n_fourier2"])
    curves = fl.track_curves(spec)
    summary = {"resolved_fraction": float(spec.resolved.mean()),
               "n_curves": len(curves)}
    if system.kind == "kdv":
        cls = fl.classify_curves(curves, system)
        summary["classification"] = {k: list(map(int, v))
                                     for k, v in cls.items()}
    fl.spectrum_to_csv(spec, outdir / "spectrum.csv", curves)
    fl.figure_data_csv(curves, outdir / "figure1_data.csv")
    with open(outdir / "spectrum_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"spectrum on {spec.n_xi} Floquet points, "
          f"{summary['resolved_fraction']:.1%} resolved, "
          f"{len(curves)} tracked branches")
    return EXIT_OK


def cmd_check(args):
    from . import stability as st

    cfg, outdir, system, wave = _prepare(args)
    g, cc = cfg["grids"], cfg["check"]
    check_cfg = dict(cc)
    check_cfg["n_xi"] = g["n_xi"]
    check_cfg["n_fourier"] = g["n_fourier"]
    check_cfg["n_fourier2"] = g["n_fourier2"]
    report, inconclusive = st.full_report(system, wave, check_cfg)
    report.to_json(outdir / "stability_report.json")
    text = report.text_summary()
    with open(outdir / "stability_report.txt", "w") as fh:
        fh.write(text + "\n")
    print(text)
    return st.report_exit_status(report, inconclusive)


def cmd_simulate(args):
    from . import dynamics as dyn
    from .bloch import SampledLine

    cfg, outdir, system, wave = _prepare(args)
    g, sc = cfg["grids"], cfg["simulate"]
    n, m = g["n_cells"], g["pts_per_cell"]
    rng = np.random.default_rng(cfg["seed"])
    dc = sc["data"]
    if dc["shape"] == "gaussian":
        base = dyn.gaussian_bump(n, m, dc["width_cells"], amplitude=dc["amplitude"],
                                 zero_mean=dc["zero_mean"]).values.real
    elif dc["shape"] == "random_bandlimited":
        K = n * m
        nb = max(4, K // 16)
        cf = np.zeros(K, dtype=complex)
        cf[1:nb] = rng.normal(size=nb - 1) + 1j * rng.normal(size=nb - 1)
        cf[-nb + 1:] = np.conj(cf[1:nb])[::-1]
        base = np.fft.ifft(cf).real * K
        base *= dc["amplitude"] / (np.abs(base).max() + 1e-300)
    else:
        base = np.zeros(n * m)
    times = _times_array(sc["times"])
    if system.d == 1:
        w0vals = base
    else:
        w0vals = np.zeros((system.d, n * m))
        w0vals[dc["component"]] = base

    if sc["kind"] == "nonlinear":
        if system.kind != "parabolic":
            raise ConfigError("nonlinear runs need a parabolic system")
        u0 = np.tile(np.atleast_2d(wave.values(m)).real, (1, n)) + \
            np.atleast_2d(w0vals)
        try:
            traj = dyn.evolve_parabolic_nonlinear(
                system, wave, SampledLine(u0, n, m), times, sc["dt"],
                norms=sc["norms"])
        except dyn.StepSizeError as exc:
            print(f"run rejected: {exc}")
            return EXIT_FAIL
        blow = traj.meta.get("blowup", False)
    else:
        traj = dyn.evolve_linear(system, wave,
                                 SampledLine(w0vals if system.d > 1 else base,
                                             n, m),
                                 times, norms=sc["norms"])
        blow = False

    if sc["sm_norm"]:
        smc = sc["sm_norm"]
        series = []
        for i in range(traj.times.size):
            v, _ = dyn.compute_sm_norm(traj.state_line(i), wave,
                                       smc.get("space", "Linf"),
                                       cutoff=smc.get("cutoff", np.pi / 8),
                                       refine=smc.get("refine", True))
            series.append(v)
        traj.norms[f"N_{smc.get('space', 'Linf')}"] = np.array(series)

    dyn.trajectory_norms_to_csv(traj, outdir / "norms.csv")
    dyn.save_states(traj, outdir / "states.bin")
    fits = {}
    window = sc["fit_window"]
    for name, series in traj.norms.items():
        try:
            fit = dyn.fit_decay(traj.times, series,
                                window=tuple(window) if window else None)
            fits[name] = {"exponent": fit.exponent, "drift": fit.drift,
                          "window": fit.window, "residual": fit.residual}
        except ValueError as exc:
            fits[name] = {"error": str(exc)}
    with open(outdir / "decay_fits.json", "w") as fh:
        json.dump(fits, fh, indent=2)
    for name, f in fits.items():
        if "exponent" in f:
            print(f"{name}: exponent {f['exponent']:+.4f} "
                  f"(drift {f['drift']:.4f})")
    if blow:
        print("trajectory truncated: blow-up detected")
        return EXIT_FAIL
    return EXIT_OK


def cmd_whitham(args):
    from . import whitham as wh
    from . import floquet as fl

    cfg, outdir, system, wave = _prepare(args)
    wc = cfg["whitham"]
    spans = wc["spans"]
    if spans is None:
        spans = {nm: 0.02 * max(1.0, abs(v)) for nm, v in
                 zip(wave.param_names, wave.params)}
        spans["k"] = 0.01 * wave.k
    maps = wh.tabulate_averages(system, wave, spans, wc["counts"],
                                solve_kw={"report_tol": wc["solve_report_tol"]})
    maps.to_json(outdir / "averaged_maps.json")
    at = dict(zip(wave.param_names, wave.params.tolist()))
    at["k"] = wave.k
    res = wh.characteristic_matrix(maps, at)
    mapped = wh.moving_frame_slope_map(res.speeds.real, wave)
    exp = fl.critical_expansion(system, wave,
                                fd_solve_kw={"report_tol": wc["solve_report_tol"]})
    with open(outdir / "characteristics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["speed_original_frame", "slope_from_whitham",
                    "slope_from_pencil"])
        mu = np.sort((exp.slopes / 1j).real)
        for s, sm, sp in zip(np.sort(res.speeds.real), np.sort(mapped), mu):
            w.writerow([repr(float(s)), repr(float(sm)), repr(float(sp))])
    summary = {
        "hyperbolic": res.hyperbolic,
        "leave_one_out_error": maps.loo_error,
        "speeds": np.sort(res.speeds.real).tolist(),
        "slope_match_rel": float(np.max(
            np.abs(np.sort(mapped) - np.sort((exp.slopes / 1j).real))
            / np.abs(np.sort((exp.slopes / 1j).real)))),
    }
    with open(outdir / "whitham_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"characteristic speeds {np.round(np.sort(res.speeds.real), 6)} "
          f"(hyperbolic: {res.hyperbolic}); "
          f"slope cross-check {summary['slope_match_rel']:.2e}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="blochwave",
        description="Spectral stability and modulation dynamics of periodic "
                    "traveling waves")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in (("profile", cmd_profile), ("spectrum", cmd_spectrum),
                     ("check", cmd_check), ("simulate", cmd_simulate),
                     ("whitham", cmd_whitham)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
