"""Command-line front end.

    heatsleuth run <config> [--seed S] [--out DIR] [--jobs J]
                   [--allow-inverse-crime] [--no-plots] [--key=value ...]
    heatsleuth plot <run-dir> [--format svg]
    heatsleuth oracle-compare <config> [--out DIR]

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
failure.  Any ``--key=value`` pair whose key is a config field overrides
the config file.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import experiment, fem, plots, spectral
from .experiment import ConfigError, ExperimentConfig, run_experiment, validate_config
from .fem import FemError
from .sampler import SamplerError
from .shapes import ShapeError, ShapeKind
from .spectral import SpectralError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _split_overrides(extras):
    """Turn leftover ``--key=value`` tokens into an override dict."""
    overrides = {}
    for tok in extras:
        if not (tok.startswith("--") and "=" in tok):
            raise ConfigError(f"unrecognized argument {tok!r}")
        key, value = tok[2:].split("=", 1)
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = value
    return overrides


def _load_config(path: str, overrides: dict) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return validate_config(text, overrides)


def _run_one(cfg: ExperimentConfig, make_plots: bool) -> Path:
    artifacts = run_experiment(cfg)
    if make_plots:
        plots.emit_plots(artifacts.out_dir)
    return artifacts.out_dir


def cmd_run(args, extras) -> int:
    overrides = _split_overrides(extras)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.allow_inverse_crime:
        overrides["allow_inverse_crime"] = True
    cfg = _load_config(args.config, overrides)

    if args.jobs > 1:
        base = Path(cfg.out)
        configs = [
            dataclasses.replace(cfg, seed=cfg.seed + j, out=str(base / f"seed_{cfg.seed + j}"))
            for j in range(args.jobs)
        ]
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_run_one, c, not args.no_plots) for c in configs]
            for fut in futs:
                print(f"run complete: {fut.result()}")
    else:
        out_dir = _run_one(cfg, not args.no_plots)
        print(f"run complete: {out_dir}")
    return EXIT_OK


def cmd_plot(args, extras) -> int:
    if extras:
        raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
    written = plots.emit_plots(args.run_dir, fmt=args.format)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_oracle_compare(args, extras) -> int:
    overrides = _split_overrides(extras)
    if args.out is not None:
        overrides["out"] = args.out
    cfg = _load_config(args.config, overrides)
    shape = cfg.truth_shape()

    mesh = fem.build_mesh(cfg.fine_n_r, cfg.fine_n_theta)
    stepper = fem.HeatStepper(fem.assemble(mesh), cfg.dt)
    solver = fem.TransientFluxSolver(stepper, shape, cfg.strength)

    basis = spectral.build_basis(max(cfg.n_eigen, 200))
    if shape.kind is ShapeKind.CIRCLE:
        d = spectral.disc_fourier_coeff(shape.center, shape.xi[2], basis)
    else:
        d = spectral.fourier_coeff(shape, basis)

    thetas = np.linspace(0.0, 2.0 * math.pi, 10, endpoint=False)
    times = (0.05, 0.1, 0.2)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    steady = spectral.steady_flux(shape, thetas)
    rows = []
    print("theta,t,fem,spectral,abs_err,rel_err_vs_peak")
    for t in times:
        spec = np.array([
            spectral.flux_series(th, t, d, basis, cfg.strength, s)
            for th, s in zip(thetas, steady)
        ])
        peak = np.abs(spec).max()
        for th, s in zip(thetas, spec):
            f = solver.flux(th, t)
            line = (th, t, f, s, abs(f - s), abs(f - s) / peak)
            rows.append(line)
            print(",".join(repr(float(v)) for v in line))
    with open(out / "oracle_compare.csv", "w") as fh:
        fh.write("theta,t,fem,spectral,abs_err,rel_err_vs_peak\n")
        for line in rows:
            fh.write(",".join(repr(float(v)) for v in line) + "\n")
    worst = max(r[5] for r in rows)
    print(f"# worst relative error vs peak: {worst:.4%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatsleuth",
        description="Bayesian heat-source reconstruction on the unit disc",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--allow-inverse-crime", action="store_true")
    p_run.add_argument("--no-plots", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_plot = sub.add_parser("plot", help="render figures for a finished run")
    p_plot.add_argument("run_dir")
    p_plot.add_argument("--format", default="svg", choices=("svg", "png", "pdf"))
    p_plot.set_defaults(func=cmd_plot)

    p_oc = sub.add_parser("oracle-compare",
                          help="finite element vs spectral series flux report")
    p_oc.add_argument("config")
    p_oc.add_argument("--out", default=None)
    p_oc.set_defaults(func=cmd_oracle_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except (ConfigError, ShapeError, plots.PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FemError, SamplerError, SpectralError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
