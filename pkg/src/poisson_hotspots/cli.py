"""Batch command surface: simulate, fit, calibrate, detect, localize, evaluate.

Every command reads an optional ``key = value`` configuration file plus
``--set key=value`` overrides, writes its outputs into ``--out`` and leaves a
``manifest.json`` there.

Exit status: 0 success, 10 finished without an alarm, 2 invalid input or
configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter

import numpy as np

from . import __version__
from .basis import default_basis_set
from .evalkit import run_experiment, write_records
from .io import (
    ConfigError,
    RunManifest,
    atomic_output,
    atomic_write_text,
    ingest_counts,
    ingest_population,
    load_config,
    write_counts_csv,
    write_population_csv,
    write_truth_csv,
)
from .localize import RULES, format_report, localize, write_category_grid, write_report_csv
from .model import ProblemData
from .monitor import CalibrationError, bootstrap_generator, calibrate_limit, normal_generator, write_history_csv
from .pipeline import MethodConfig, detect, phase1_statistics
from .simgen import ScenarioConfig, derive_rng, generate_counts
from .solver import SolverConfig, default_lambda_grid, fit, fit_path, lambda_max

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_NO_ALARM = 10


def _scenario(cfg) -> ScenarioConfig:
    return ScenarioConfig(
        dims=cfg["dims"],
        delta=cfg["delta"],
        tau=cfg["tau"],
        hotspot_fraction=cfg["hotspot_fraction"],
        population_trend=cfg["population_trend"],
        noise_sd=cfg["noise_sd"],
        base_rate=cfg["base_rate"],
        units=cfg["units"],
        seed=cfg["seed"],
    )


def _solver(cfg) -> SolverConfig:
    return SolverConfig(
        max_outer=cfg["max_outer"],
        max_inner=cfg["max_inner"],
        outer_tol=cfg["outer_tol"],
        inner_tol=cfg["inner_tol"],
    )


def _method(cfg, limit=None) -> MethodConfig:
    return MethodConfig(
        n_lambda=cfg["n_lambda"],
        lambda_ratio=cfg["lambda_ratio"],
        d_star=cfg["d_star"],
        target_arl0=cfg["target_arl0"],
        calib_reps=cfg["calib_reps"],
        limit=limit,
        rule=cfg["rule"],
        rule_param=cfg["rule_param"],
        pearson=cfg["pearson"],
        fit_mode=cfg["fit_mode"],
        solver=_solver(cfg),
    )


def _calib_seed(seed: int) -> int:
    return int(derive_rng(seed, "calibrate", 0).integers(2**63))


def _unique(names) -> list:
    seen = Counter()
    out = []
    for n in names:
        seen[n] += 1
        out.append(n if seen[n] == 1 else f"{n} ({seen[n]})")
    return out


class _Loaded:
    def __init__(self, cfg):
        if not cfg["counts"] or not cfg["population"]:
            raise ConfigError("counts and population files are required")
        self.count_data = ingest_counts(cfg["counts"])
        cd = self.count_data
        pop = ingest_population(cfg["population"], cd.locations, cd.years, len(cd.categories), cfg["population_units"])
        basis = default_basis_set(cd.dims, order=cfg["order"], knot_counts=cfg["knot_counts"])
        self.data = ProblemData(cd.counts, pop, basis)
        self.inputs = [cfg["counts"], cfg["population"]]


def _write(manifest, path, writer):
    with atomic_output(path) as tmp:
        writer(tmp)
    manifest.record_output(path)


def cmd_simulate(cfg, out, manifest):
    sc = generate_counts(_scenario(cfg), rng=derive_rng(cfg["seed"], "scenario", 0))
    n1, n2, n3 = sc.config.dims
    locs = _unique(sc.locations)
    cats = [f"type{j + 1}" for j in range(n2)]
    years = [cfg["start_year"] + k for k in range(n3)]
    _write(manifest, os.path.join(out, "counts.csv"), lambda p: write_counts_csv(sc.counts, p, locs, cats, years))
    _write(manifest, os.path.join(out, "population.csv"), lambda p: write_population_csv(sc.pop, p, locs, years))
    _write(manifest, os.path.join(out, "truth.csv"), lambda p: write_truth_csv(sc.truth, p, locs, cats))
    print(f"simulated {n1}x{n2}x{n3} counts with {len(sc.truth)} hot cells from period {sc.config.tau + 1}")
    return EXIT_OK


def _write_slices(fit, loaded, out, manifest):
    cd = loaded.count_data
    folder = os.path.join(out, "fitted")
    os.makedirs(folder, exist_ok=True)
    for k, year in enumerate(cd.years):
        def writer(p, k=k):
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["location", "category", "mean_count", "background_count", "hotspot"])
                for i, loc in enumerate(cd.locations):
                    for j, cat in enumerate(cd.categories):
                        w.writerow([loc, cat, repr(float(fit.mu_hat_counts[i, j, k])),
                                    repr(float(fit.background_counts[i, j, k])), repr(float(fit.h_hat[i, j, k]))])
        _write(manifest, os.path.join(folder, f"slice_{year}.csv"), writer)


def cmd_fit(cfg, out, manifest):
    loaded = _Loaded(cfg)
    manifest.add_inputs(loaded.inputs)
    scfg = _solver(cfg)
    if cfg["auto_path"] or cfg["lambda"] is None:
        grid = default_lambda_grid(lambda_max(loaded.data, scfg), cfg["n_lambda"], cfg["lambda_ratio"])
        path = fit_path(loaded.data, grid, scfg)
        fits = list(zip(path.lambdas, path.fits))
    else:
        if cfg["lambda"] < 0:
            raise ConfigError("lambda must be nonnegative")
        fits = [(cfg["lambda"], fit(loaded.data, cfg["lambda"], scfg))]
    good = [(lam, f) for lam, f in fits if f is not None]
    if not good:
        raise ArithmeticError("every fit on the penalty grid failed")

    def summary(p):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "objective", "converged", "outer_iterations", "inner_iterations", "hotspot_nonzeros", "failed"])
            for lam, f in fits:
                if f is None:
                    w.writerow([repr(lam), "", "", "", "", "", 1])
                else:
                    w.writerow([repr(lam), repr(f.objective_value), int(f.converged), f.outer_iterations,
                                f.inner_iterations, f.hotspot_nonzeros, 0])

    def trace(p):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "iteration", "objective"])
            for lam, f in good:
                for it, val in enumerate(f.objective_trace):
                    w.writerow([repr(lam), it, repr(float(val))])

    _write(manifest, os.path.join(out, "fit_summary.csv"), summary)
    _write(manifest, os.path.join(out, "objective_trace.csv"), trace)
    lam, chosen = good[-1]
    _write_slices(chosen, loaded, out, manifest)
    print(f"fitted {len(good)} of {len(fits)} penalties; slices written for lambda={lam:g}")
    return EXIT_OK


def cmd_calibrate(cfg, out, manifest):
    method = _method(cfg)
    if cfg["generator"] == "normal":
        gen, source = normal_generator(0.0, 1.0), {}
    elif cfg["generator"] == "bootstrap":
        loaded = _Loaded(cfg)
        manifest.add_inputs(loaded.inputs)
        data = loaded.data
        grid = default_lambda_grid(lambda_max(data, method.solver), method.n_lambda, method.lambda_ratio)
        path = fit_path(data, grid, method.solver)
        moments, tilde = phase1_statistics(path, data, cfg["phase1"], method.pearson)
        gen = bootstrap_generator(tilde)
        source = {"phase1": cfg["phase1"], "phase1_p_tilde": tilde, "dropped_lambdas": list(moments.dropped)}
    else:
        raise ConfigError(f"generator must be bootstrap or normal, got {cfg['generator']!r}")
    limit = calibrate_limit(gen, method.d_star, method.target_arl0, method.calib_reps, _calib_seed(cfg["seed"]))
    body = {"limit": limit, "d_star": method.d_star, "target_arl0": method.target_arl0,
            "reps": method.calib_reps, "generator": cfg["generator"], **source}
    path = os.path.join(out, "calibration.json")
    atomic_write_text(path, json.dumps(body, indent=2) + "\n")
    manifest.record_output(path)
    print(f"control limit {limit:.6g} for target ARL0 {method.target_arl0:g}")
    return EXIT_OK


def cmd_detect(cfg, out, manifest):
    limit = cfg["limit"]
    if limit is None and cfg["calibration"]:
        with open(cfg["calibration"], encoding="utf-8") as fh:
            limit = float(json.load(fh)["limit"])
        manifest.add_inputs([cfg["calibration"]])
    loaded = _Loaded(cfg)
    manifest.add_inputs(loaded.inputs)
    cd = loaded.count_data
    det = detect(loaded.data, cfg["phase1"], _method(cfg, limit), _calib_seed(cfg["seed"]), cd.locations, cd.categories)
    _write(manifest, os.path.join(out, "chart_history.csv"), lambda p: write_history_csv(det.chart, p))
    alarm_year = None if det.alarm is None else cd.years[det.alarm - 1]
    body = {"alarm": det.alarm, "alarm_year": alarm_year, "lambda_star": det.lam_star, "limit": det.limit,
            "d_star": det.chart.d_star, "phase1": cfg["phase1"]}
    path = os.path.join(out, "alarm.json")
    atomic_write_text(path, json.dumps(body, indent=2) + "\n")
    manifest.record_output(path)
    if det.alarm is None:
        print("no alarm")
        return EXIT_NO_ALARM
    h = det.alarm_fit.h_hat[:, :, det.alarm - 1]
    _write(manifest, os.path.join(out, "alarm_hotspots.csv"),
           lambda p: write_category_grid(h, p, list(cd.locations), list(cd.categories)))
    print(f"alarm at period {det.alarm} (year {alarm_year}), lambda*={det.lam_star:.6g}")
    return EXIT_OK


def _read_grid(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cats = rows[0][1:]
    locs = [r[0] for r in rows[1:]]
    h = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return h, locs, cats


def cmd_localize(cfg, out, manifest):
    src = cfg["detect_dir"]
    if not src:
        raise ConfigError("detect_dir is required")
    alarm_path = os.path.join(src, "alarm.json")
    with open(alarm_path, encoding="utf-8") as fh:
        alarm = json.load(fh)
    manifest.add_inputs([alarm_path])
    if alarm["alarm"] is None:
        print("detect run raised no alarm; nothing to localize")
        return EXIT_NO_ALARM
    grid_path = os.path.join(src, "alarm_hotspots.csv")
    manifest.add_inputs([grid_path])
    h, locs, cats = _read_grid(grid_path)
    rule, param = cfg["rule"], cfg["rule_param"]
    if rule not in RULES:
        raise ConfigError(f"unknown rule {rule!r}")
    report = _report_from_grid(h, alarm["alarm"], rule, param, locs, cats)
    _write(manifest, os.path.join(out, "hotspots.csv"), lambda p: write_report_csv(report, p))
    text = format_report(report)
    path = os.path.join(out, "hotspots.txt")
    atomic_write_text(path, text)
    manifest.record_output(path)
    print(text, end="")
    return EXIT_OK


class _GridFit:
    """Minimal stand-in exposing one hot-spot slice for :func:`localize`."""

    def __init__(self, h, t):
        self.h_hat = np.zeros(h.shape + (t,))
        self.h_hat[:, :, t - 1] = h


def _report_from_grid(h, t, rule, param, locs, cats):
    return localize(_GridFit(h, t), t, rule, param, locs, cats)


def cmd_evaluate(cfg, out, manifest):
    if cfg["replications"] < 1:
        raise ConfigError("replications must be >= 1")
    table = run_experiment(_scenario(cfg), cfg["replications"], cfg["seed"], _method(cfg), workers=max(1, cfg["workers"]))
    _write(manifest, os.path.join(out, "aggregate.csv"), table.write_csv)
    path = os.path.join(out, "aggregate.txt")
    atomic_write_text(path, table.format())
    manifest.record_output(path)
    _write(manifest, os.path.join(out, "replications.ndjson"), lambda p: write_records(table.results, p))
    print(table.format(), end="")
    if table.errors:
        print(f"{len(table.errors)} replications failed", file=sys.stderr)
    if not table.results:
        raise ArithmeticError("every replication failed")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic count tensor"),
    "fit": (cmd_fit, "fit the penalized model at one penalty or over a grid"),
    "calibrate": (cmd_calibrate, "find the CUSUM control limit for a target ARL0"),
    "detect": (cmd_detect, "run the CUSUM chart over the monitoring periods"),
    "localize": (cmd_localize, "threshold the hot-spot estimate at the alarm"),
    "evaluate": (cmd_evaluate, "replicated simulation study"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-hotspots", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, help="same as --set seed=N")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        os.makedirs(args.out, exist_ok=True)
        inputs = [args.config] if args.config else []
        manifest = RunManifest.start(args.command, cfg, inputs)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    handler = COMMANDS[args.command][0]
    try:
        code = handler(cfg, args.out, manifest)
    except (CalibrationError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        code = EXIT_VALIDATION
    status = {EXIT_OK: "ok", EXIT_NO_ALARM: "no-alarm", EXIT_VALIDATION: "invalid", EXIT_NUMERICAL: "numerical-failure"}[code]
    manifest.write(os.path.join(args.out, "manifest.json"), status)
    return code


if __name__ == "__main__":
    sys.exit(main())
