"""Command line entry point: ``plsim {fit,test-beta,test-eta,simulate,partition}``.

Options can also come from an INI file given with ``--config``. Keys in the
``[DEFAULT]`` section and in a section named after the subcommand use the
long option names with dashes or underscores; command line values win.
Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import NumericalError, PLSIMError, ValidationError
from .inference import NullLinkSpec, test_beta, test_eta
from .io import (Roles, emit_results, load_and_standardize, partition_variables, read_csv,
                 screen_features, standardize, write_json, _clean)
from .model import Dataset
from .optimizer import OptimConfig, fit_plsim, select_lambda
from .penalty import PenaltySpec
from .simulation import MODELS, RECIPES, SimScenario, run_study
from .smoother import KernelSpec, select_bandwidth_cv

log = logging.getLogger("plsim")

THREADS_ENV = "PLSIM_THREADS"


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _add_model_args(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", required=True, help="response column")
    p.add_argument("--linear", required=True, help="comma-separated linear-part columns")
    p.add_argument("--index", default=None,
                   help="comma-separated index-part columns (default: all remaining)")
    p.add_argument("--screen", type=int, default=None,
                   help="keep only this many index columns, ranked by |correlation|")
    p.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    p.add_argument("--h", type=float, default=0.37, help="bandwidth on the index scale")
    p.add_argument("--h-grid", type=_floats, default=None,
                   help="comma-separated bandwidths; choose h by cross-validation")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--penalty", choices=("scad", "l1"), default="scad")
    p.add_argument("--scad-a", type=float, default=3.7)
    p.add_argument("--lam", type=float, default=None, help="fixed lambda (default: HBIC over a grid)")
    p.add_argument("--n-lambda", type=int, default=30)
    p.add_argument("--lambda-min-ratio", type=float, default=0.01)
    p.add_argument("--max-outer-iters", type=int, default=50)
    p.add_argument("--outer-tol", type=float, default=1e-6)
    p.add_argument("--penalty-scaling", choices=("column", "none"), default="column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plsim", description="Penalized fitting and testing for partially linear single-index models.")
    parser.add_argument("--version", action="version", version=f"plsim {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI file with option defaults")
    common.add_argument("--outdir", default="plsim-out")
    common.add_argument("--seed", type=int, default=20240101)
    common.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="penalized profile fit")
    _add_model_args(p)

    p = sub.add_parser("test-beta", parents=[common], help="F-type test of beta = 0")
    _add_model_args(p)
    p.add_argument("--level", type=float, default=0.05)

    p = sub.add_parser("test-eta", parents=[common], help="specification test of the link")
    _add_model_args(p)
    p.add_argument("--link", choices=("linear", "affine", "constant"), default="linear")
    p.add_argument("--b", type=float, default=None, help="test bandwidth (default: rule of thumb)")
    p.add_argument("--b-scale", type=float, default=1.0)
    p.add_argument("--level", type=float, default=0.05)

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo study")
    p.add_argument("--model", choices=MODELS, default="m1a")
    p.add_argument("--recipe", choices=RECIPES, default="estimate")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--signals", type=_floats, default=[0.0])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or 1)")

    p = sub.add_parser("partition", parents=[common], help="split columns into linear and index parts")
    p.add_argument("--data", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--screen", type=int, default=None)
    p.add_argument("--corr-threshold", type=float, default=0.3)
    p.add_argument("--band-k", type=float, default=0.3)
    p.add_argument("--h", type=float, default=None,
                   help="bandwidth for the per-column smooths (default: normal reference)")
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from the ``--config`` file, if any."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    cfg = configparser.ConfigParser()
    if not cfg.read(known.config, encoding="utf-8"):
        raise ValidationError(f"cannot read config file {known.config!r}")
    args = parser.parse_args(argv)
    section = cfg[args.command] if cfg.has_section(args.command) else cfg.defaults()
    sub = next(a for a in parser._subparsers._group_actions[0].choices.values()
               if a.prog.endswith(" " + args.command))
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in section.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ValidationError(f"unknown option {key!r} in config file")
        act = actions[dest]
        defaults[dest] = act.type(raw) if act.type else raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _load(args):
    roles = Roles(args.response, args.linear, args.index)
    data = load_and_standardize(args.data, roles)
    if args.screen is not None and args.screen < data.p:
        keep = np.sort(screen_features(data, args.screen))
        data = Dataset(data.y, data.x[:, keep], data.z)
        log.info("screened index columns down to %d", data.p)
    return data


def _optim(args):
    return OptimConfig(max_outer_iters=args.max_outer_iters, outer_tol=args.outer_tol,
                       n_lambda=args.n_lambda, lambda_min_ratio=args.lambda_min_ratio,
                       penalty_scaling=args.penalty_scaling)


def _estimate(args, data):
    kernel = KernelSpec(args.kernel, args.h)
    penalty = PenaltySpec(args.penalty, 0.1 if args.lam is None else args.lam, args.scad_a)
    config = _optim(args)
    if args.h_grid:
        # bandwidth from a pilot fit at the starting h
        _, pilot = select_lambda(data, kernel, config, penalty)
        h = select_bandwidth_cv(data, pilot.theta_hat, args.h_grid, folds=args.cv_folds,
                                kernel=kernel, seed=args.seed)
        kernel = kernel.with_bandwidth(h)
        log.info("cross-validated bandwidth h=%g", h)
    if args.lam is None:
        _, fit = select_lambda(data, kernel, config, penalty)
    else:
        fit = fit_plsim(data, kernel, penalty, config)
    return kernel, penalty, config, fit


def _meta(args, **extra):
    return {"plsim": __version__, "command": args.command, "seed": args.seed, **extra}


def cmd_fit(args):
    data = _load(args)
    kernel, _, _, fit = _estimate(args, data)
    paths = emit_results(args.outdir, data=data, fit=fit, metadata=_meta(args, kernel=kernel.family))
    print(f"lambda={fit.lam:.6g} active={fit.active.s} rss={fit.rss:.6g} status={fit.status}")
    return paths


def cmd_test_beta(args):
    data = _load(args)
    kernel = KernelSpec(args.kernel, args.h)
    penalty = PenaltySpec(args.penalty, 0.1, args.scad_a)
    res = test_beta(data, kernel, penalty, _optim(args), lam=args.lam)
    emit_results(args.outdir, data=data, fit=res.unrestricted, beta_test=res,
                 metadata=_meta(args, level=args.level))
    print(f"T_n={res.t_n:.6g} df={res.df} p={res.p_value:.6g} "
          f"{'reject' if res.p_value < args.level else 'retain'} at {args.level:g}")


def cmd_test_eta(args):
    data = _load(args)
    _, _, _, fit = _estimate(args, data)
    link = {"linear": NullLinkSpec.linear, "affine": NullLinkSpec.affine,
            "constant": NullLinkSpec.constant}[args.link]()
    res = test_eta(data, fit, link, b=args.b, b_scale=args.b_scale)
    emit_results(args.outdir, data=data, fit=fit, eta_test=res,
                 metadata=_meta(args, level=args.level, link=args.link))
    print(f"V_n={res.v_n:.6g} V_n^2={res.v_n_sq:.6g} p={res.p_value:.6g} b={res.bandwidth_b:.4g}")


def cmd_simulate(args):
    base = SimScenario(model=args.model, n=args.n, p=args.p, rho=args.rho, h=args.h, b=args.b,
                       noise_scale=args.noise_scale, seed=args.seed, reps=args.reps)
    table = run_study(base, args.signals, args.recipe, threads=_threads(args))
    emit_results(args.outdir, summary=table)
    for row in table.rows:
        log.info("signal=%s failures=%s", row["signal"], row["failures"])
    print(f"wrote {len(table.rows)} rows to {os.path.join(args.outdir, 'summary.csv')}")


def cmd_partition(args):
    names, mat = read_csv(args.data)
    if args.response not in names:
        raise ValidationError(f"column {args.response!r} not found in the input header")
    iy = names.index(args.response)
    cand = [j for j in range(len(names)) if j != iy]
    std = standardize(mat, names)
    y, x = std[:, iy], std[:, cand]
    cand_names = [names[j] for j in cand]
    if args.screen is not None and args.screen < x.shape[1]:
        keep = np.sort(screen_features((y, x), args.screen))
        x = x[:, keep]
        cand_names = [cand_names[j] for j in keep]
    kernel = KernelSpec("gaussian", args.h) if args.h else None
    res = partition_variables((y, x), args.corr_threshold, args.band_k, kernel, names=cand_names)
    doc = {"linear_vars": [cand_names[j] for j in res.linear_vars],
           "index_vars": [cand_names[j] for j in res.index_vars],
           "screened": cand_names, "diagnostics": res.diagnostics, "settings": res.settings}
    os.makedirs(args.outdir, exist_ok=True)
    write_json(os.path.join(args.outdir, "partition.json"), _clean(doc))
    print(f"linear: {len(doc['linear_vars'])} index: {len(doc['index_vars'])}")


COMMANDS = {"fit": cmd_fit, "test-beta": cmd_test_beta, "test-eta": cmd_test_eta,
            "simulate": cmd_simulate, "partition": cmd_partition}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"plsim: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"plsim: numerical failure: {exc}", file=sys.stderr)
        return 3
    except PLSIMError as exc:
        print(f"plsim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plsim: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
