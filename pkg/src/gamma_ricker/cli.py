"""Command-line entry point: ``gamma-ricker <subcommand> [flags]``.

Exit codes: 0 success, 1 a check or analysis failed, 2 usage error or a
violated precondition.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import svg
from .equilibrium import DEFAULT_Z_MAX, phi_family_checks, solve_equilibrium
from .errors import DomainError, NumericFailure
from .gamma_kernels import gamma_from_moments, gamma_pdf
from .moment_map import MomentState, Params, iterate
from .montecarlo import (
    EnsembleConfig,
    closure_prediction,
    compare_distribution,
    run_ensemble,
)
from .scan import boundary_error, existence_scan, stability_scan

FORMATS = ("csv", "json", "svg")
VALIDATE_PRESET = {"transient": 1000, "collect": 500, "t_max": 1500}
VALIDATE_TOLERANCE = 0.05


class UsageError(Exception):
    pass


# --- output helpers ----------------------------------------------------------------

def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(obj):
    # JSON has no NaN/inf; map them to null.
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _formats(values):
    out = []
    for item in values or []:
        for f in item.split(","):
            f = f.strip().lower()
            if f not in FORMATS:
                raise UsageError(f"--format: unknown format {f!r}; choose from {', '.join(FORMATS)}")
            if f not in out:
                out.append(f)
    return out


def histogram_csv(edges, density):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["left", "right", "density"])
    for a, b, d in zip(edges[:-1], edges[1:], density):
        w.writerow([f"{a:.17g}", f"{b:.17g}", f"{d:.17g}"])
    return buf.getvalue()


# --- subcommands -------------------------------------------------------------------

def cmd_equilibrium(args):
    eq = solve_equilibrium(Params(args.r, args.v), args.z_max)
    sys.stdout.write(_json(_clean(eq.to_dict())))
    return 0


def cmd_iterate(args):
    p = Params(args.r, args.v)
    traj = iterate(MomentState(args.mu0, args.s0), p, args.steps)
    text = traj.to_csv()
    formats = _formats(args.format) or ["csv"]
    if args.out:
        write_atomic(args.out, text)
    elif args.out_dir:
        write_atomic(os.path.join(args.out_dir, "trajectory.csv"), text)
    else:
        sys.stdout.write(text)
    if "svg" in formats:
        n = np.arange(len(traj.states))
        figure = svg.line_plot(
            n,
            {"mean": ([st.mu for st in traj.states], "#1f4e9c", None),
             "variance": ([st.s for st in traj.states], "#c0392b", "4 3")},
            text, title=f"moment map r={args.r:g} v={args.v:g}", ylabel="moment",
        )
        write_atomic(os.path.join(args.out_dir or ".", "trajectory.svg"), figure)
    if not traj.completed:
        print(f"trajectory stopped early: {traj.reason}", file=sys.stderr)
    return 0


def _ensemble_config(args, preset=False):
    p = Params(args.r, args.v)
    fields = {
        "n_ens": args.n_ens, "t_max": args.t_max, "transient": args.transient,
        "collect": args.collect, "seed": args.seed, "init_mu": args.init_mu,
        "init_s": args.init_s, "conv_window": args.conv_window, "conv_tol": args.conv_tol,
        "hist_bins": args.hist_bins, "noise": args.noise,
    }
    if preset:
        for k, v in VALIDATE_PRESET.items():
            if fields[k] is None:
                fields[k] = v
    defaults = EnsembleConfig(p)
    fields = {k: (getattr(defaults, k) if v is None else v) for k, v in fields.items()}
    return EnsembleConfig(p, **fields)


def _simulate(args, preset):
    cfg = _ensemble_config(args, preset)
    stats = run_ensemble(cfg, threads=args.threads)
    report = stats.to_json_dict()
    comparison = None
    reference = None
    if preset:
        reference = closure_prediction(cfg)
        if reference is None:
            report["comparison"] = None
        else:
            comparison = compare_distribution(stats, reference.mu, reference.s)
            report["comparison"] = {
                "closure_mu": reference.mu,
                "closure_s": reference.s,
                "l1": comparison.l1,
                "mean_rel_err": comparison.mean_rel_err,
                "var_rel_err": comparison.var_rel_err,
                "tail_level": comparison.tail_level,
                "tail_mass_empirical": comparison.tail_mass_empirical,
                "tail_mass_model": comparison.tail_mass_model,
            }
    report = _clean(report)
    formats = _formats(args.format) or ["csv", "json"]
    out_dir = args.out_dir or "."
    series_csv = stats.to_csv()
    hist_csv = histogram_csv(stats.hist_edges, stats.hist_density)
    if "csv" in formats:
        write_atomic(os.path.join(out_dir, "ensemble.csv"), series_csv)
        write_atomic(os.path.join(out_dir, "histogram.csv"), hist_csv)
    if "json" in formats:
        write_atomic(os.path.join(out_dir, "ensemble.json"), _json(report))
    if "svg" in formats:
        n = np.arange(len(stats.mean_series))
        write_atomic(os.path.join(out_dir, "ensemble.svg"), svg.line_plot(
            n, {"mean": (stats.mean_series, "#1f4e9c", None),
                "variance": (stats.var_series, "#c0392b", "4 3")},
            series_csv, title=f"ensemble r={cfg.p.r:g} v={cfg.p.v:g}", ylabel="moment"))
        xs = np.linspace(stats.hist_edges[0], stats.hist_edges[-1], 400) if len(stats.hist_edges) else []
        pdf = gamma_pdf(xs, gamma_from_moments(reference.mu, reference.s)) if reference is not None else []
        write_atomic(os.path.join(out_dir, "histogram.svg"), svg.histogram_overlay(
            stats.hist_edges, stats.hist_density, xs, pdf, hist_csv,
            title=f"stationary histogram r={cfg.p.r:g} v={cfg.p.v:g}"))
    summary = {
        "converged": report["converged"],
        "final_cv": report["final_cv"],
        "n_excluded": report["n_excluded"],
        "extinct": report["extinct"],
        "stationary": report["stationary"],
    }
    if preset:
        summary["comparison"] = report["comparison"]
    sys.stdout.write(_json(summary))
    return cfg, comparison


def cmd_simulate(args):
    _simulate(args, args.preset == "validate")
    return 0


def cmd_validate(args):
    _, comparison = _simulate(args, True)
    if comparison is None:
        print("closure broke down; nothing to compare against", file=sys.stderr)
        return 1
    bad = [name for name, err in (("mean", comparison.mean_rel_err), ("variance", comparison.var_rel_err))
           if not err < args.tolerance]
    if bad:
        print(f"moment mismatch above {args.tolerance:g}: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_scan(args):
    fn = existence_scan if args.kind == "existence" else stability_scan
    grid = fn((args.r_min, args.r_max), (args.v_min, args.v_max), args.nr, args.nv, args.z_max, args.threads)
    formats = _formats(args.format) or ["csv", "json"]
    out_dir = args.out_dir or "."
    text = grid.to_csv()
    stem = f"scan_{args.kind}"
    if "csv" in formats:
        write_atomic(os.path.join(out_dir, stem + ".csv"), text)
    if "json" in formats:
        write_atomic(os.path.join(out_dir, stem + ".json"), grid.sidecar_json())
    if "svg" in formats:
        write_atomic(os.path.join(out_dir, stem + ".svg"), svg.heatmap(grid, text))
    labels, counts = np.unique(grid.verdict.astype(str), return_counts=True)
    b = boundary_error(grid)
    summary = {
        "kind": args.kind,
        "cells": int(grid.verdict.size),
        "verdicts": {str(k): int(c) for k, c in zip(labels, counts)},
        "boundary_error": b.max_deviation,
        "dv": b.dv,
        "columns_without_flip": len(b.skipped_columns),
        "columns_with_multiple_flips": len(b.multi_flip_columns),
    }
    if args.kind == "existence":
        summary["multiple_root_cells"] = int(np.count_nonzero(grid.root_count != 1))
    sys.stdout.write(_json(_clean(summary)))
    return 0


def cmd_lemma_check(args):
    checks = phi_family_checks(args.points, fault=args.inject_fault)
    report = {
        "points": args.points,
        "passed": all(c.passed for c in checks),
        "checks": [{"name": c.name, "passed": c.passed, "observed": c.observed, "expected": c.expected}
                   for c in checks],
    }
    sys.stdout.write(_json(_clean(report)))
    failed = [c for c in checks if not c.passed]
    for c in failed:
        print(f"FAILED {c.name}: observed {c.observed:.6g}, expected {c.expected}", file=sys.stderr)
    return 1 if failed else 0


# --- parser --------------------------------------------------------------------------

def _positive_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {n}")
    return n


def _common(sp, formats=True):
    sp.add_argument("--config", help="JSON file supplying any flag; the command line wins")
    sp.add_argument("--out-dir", default=None, help="directory for output files (default: cwd)")
    if formats:
        sp.add_argument("--format", action="append", default=None,
                        help="output formats, comma separated or repeated: csv, json, svg")
    sp.add_argument("--threads", type=_positive_int, default=None,
                    help="worker cap (default: RICKER_THREADS or all cores)")


def _point(sp):
    sp.add_argument("--r", type=float, required=True, help="growth rate, > 0")
    sp.add_argument("--v", type=float, required=True, help="noise second moment E[eps^2], > 1")


def _ensemble_flags(sp):
    _point(sp)
    sp.add_argument("--n-ens", type=_positive_int)
    sp.add_argument("--t-max", type=_positive_int)
    sp.add_argument("--transient", type=_positive_int)
    sp.add_argument("--collect", type=_positive_int)
    sp.add_argument("--seed", type=_positive_int, default=0)
    sp.add_argument("--init-mu", type=float)
    sp.add_argument("--init-s", type=float)
    sp.add_argument("--conv-window", type=_positive_int)
    sp.add_argument("--conv-tol", type=float)
    sp.add_argument("--hist-bins", type=_positive_int)
    sp.add_argument("--noise", choices=["lognormal", "gamma", "none"])


def build_parser():
    parser = argparse.ArgumentParser(prog="gamma-ricker", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("equilibrium", help="solve for the feasible equilibrium at one (r, v)")
    _point(sp)
    sp.add_argument("--z-max", type=float, default=DEFAULT_Z_MAX)
    _common(sp, formats=False)
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("iterate", help="iterate the moment map and write its trajectory")
    _point(sp)
    sp.add_argument("--mu0", type=float, default=0.5)
    sp.add_argument("--s0", type=float, default=0.02)
    sp.add_argument("--steps", type=_positive_int, default=100)
    sp.add_argument("--out", default=None, help="trajectory CSV path (default: stdout)")
    _common(sp)
    sp.set_defaults(func=cmd_iterate)

    sp = sub.add_parser("simulate", help="Monte-Carlo ensemble of the stochastic map")
    _ensemble_flags(sp)
    sp.add_argument("--preset", choices=["validate"], default=None)
    _common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="simulate with the validation preset and compare to the closure")
    _ensemble_flags(sp)
    sp.add_argument("--tolerance", type=float, default=VALIDATE_TOLERANCE,
                    help="relative error allowed on the stationary mean and variance")
    _common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("scan", help="parameter-plane scan of existence or stability")
    sp.add_argument("kind", choices=["existence", "stability"])
    sp.add_argument("--r-min", type=float, default=0.5)
    sp.add_argument("--r-max", type=float, default=10.0)
    sp.add_argument("--v-min", type=float, default=1.05)
    sp.add_argument("--v-max", type=float, default=4.5)
    sp.add_argument("--nr", type=_positive_int, default=200)
    sp.add_argument("--nv", type=_positive_int, default=200)
    sp.add_argument("--z-max", type=float, default=DEFAULT_Z_MAX)
    _common(sp)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("lemma-check", help="limit and sign checks on the Phi, H and Q functions")
    sp.add_argument("--points", type=_positive_int, default=10_000)
    sp.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    _common(sp, formats=False)
    sp.set_defaults(func=cmd_lemma_check)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with values from ``--config`` as defaults, so explicit flags still win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if not known.config or command not in subparsers:
        return parser.parse_args(argv)
    try:
        with open(known.config) as fh:
            conf = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {known.config}: {exc}")
    if not isinstance(conf, dict):
        raise UsageError("--config: expected a JSON object")
    subparser = subparsers[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in conf.items():
        dest = key.lstrip("-").replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("help", "config", "kind") or not action.option_strings:
            raise UsageError(f"--config: unknown field {key!r} for {command}")
        if dest == "format" and isinstance(value, str):
            value = [value]
        elif isinstance(value, str) and action.type is not None:
            value = action.type(value)
        defaults[dest] = value
        # A required flag supplied by the file must not be demanded again.
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"gamma-ricker: error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"gamma-ricker: error: invalid {exc.field}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"gamma-ricker: error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"gamma-ricker: numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
