"""Command-line entry point: gen / select / regime / mc subcommands.

Every run writes its fully resolved configuration to ``config.json`` in the
output directory.  Rerunning with ``--config <that file>`` and no overriding
flags reproduces all outputs byte for byte: outputs carry no timestamps, JSON
is written with sorted keys, and floats are serialized with repr-exact
precision.  Flags always win over config-file values.

Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import datasets, lasso_path, montecarlo, regime, stability
from .distributions import make_error_dist
from .errors import NumericalError, UsageError
from .m_estimators import LossSpec

_LOSS_NAMES = {
    "l2": "squared",
    "squared": "squared",
    "ols": "squared",
    "l1": "absolute",
    "lad": "absolute",
    "absolute": "absolute",
    "huber": "huber",
}


def _loss_from_config(cfg) -> LossSpec:
    family = _LOSS_NAMES.get(cfg["loss"])
    if family is None:
        raise UsageError(f"unknown loss {cfg['loss']!r}")
    if family == "huber":
        if cfg.get("huber_delta") is None:
            raise UsageError("--huber-delta is required with --loss huber")
        return LossSpec("huber", huber_delta=cfg["huber_delta"])
    return LossSpec(family)


def _dist_from_config(cfg):
    return make_error_dist(cfg["dist"], cfg["scale"])


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over config-file values over defaults."""
    file_cfg = {}
    if args.config is not None:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults) - {"subcommand"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _require(cfg: dict, keys) -> None:
    missing = [k for k in keys if cfg[k] is None]
    if missing:
        raise UsageError(f"missing required options: {', '.join('--' + k for k in missing)}")


def _outdir(cfg: dict) -> str:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg: dict, subcommand: str, out: str) -> None:
    # the output directory is where results land, not part of the experiment
    # definition, so it is omitted to keep echoed configs location-independent
    payload = {k: v for k, v in cfg.items() if k != "out"}
    payload["subcommand"] = subcommand
    _write_json(os.path.join(out, "config.json"), payload)


GEN_DEFAULTS = {
    "n": None,
    "p": None,
    "dist": "gaussian",
    "scale": 1.0,
    "beta": None,          # comma-separated values, length p
    "corr": None,          # equicorrelation of the design, default identity
    "seed": 0,
    "out": ".",
}


def cmd_gen(args) -> int:
    cfg = _resolve(args, GEN_DEFAULTS)
    _require(cfg, ["n", "p"])
    if cfg["n"] < 2 or cfg["p"] < 1:
        raise UsageError(f"need n >= 2 and p >= 1, got n={cfg['n']}, p={cfg['p']}")
    p = cfg["p"]
    if cfg["beta"] is None:
        beta = np.zeros(p)
    else:
        beta = np.array([float(v) for v in str(cfg["beta"]).split(",")])
        if beta.shape[0] != p:
            raise UsageError(f"--beta has {beta.shape[0]} entries, expected p={p}")
    cov = "identity" if cfg["corr"] is None else ("equicorrelated", cfg["corr"])
    sim = datasets.SimConfig(
        n=cfg["n"],
        p=p,
        beta_true=beta,
        error_dist=_dist_from_config(cfg),
        design_covariance=cov,
        seed=cfg["seed"],
    )
    ds = datasets.generate_linear(sim)
    out = _outdir(cfg)
    datasets.save_csv(ds, os.path.join(out, "dataset.csv"))
    _echo_config(cfg, "gen", out)
    return 0


SELECT_DEFAULTS = {
    "data": None,
    "v": 10,
    "grid_size": 100,
    "path_grid_size": 100,
    "floor_ratio": 1e-3,
    "seed": 0,
    "holdout": None,
    "jobs": 1,
    "out": ".",
}


def _write_coefficients(path, ds, beta) -> None:
    intercept, beta_orig = datasets.destandardize_coefficients(ds, beta)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["column", "beta_standardized", "beta_original"])
        for j in range(beta.shape[0]):
            writer.writerow([f"x{j + 1}", f"{beta[j]:.17g}", f"{beta_orig[j]:.17g}"])


def _holdout_mse(holdout_path, ds, beta) -> float:
    held = datasets.load_csv(holdout_path)
    intercept, beta_orig = datasets.destandardize_coefficients(ds, beta)
    pred = held.x @ beta_orig + intercept
    return float(np.mean((held.y - pred) ** 2))


def cmd_select(args) -> int:
    cfg = _resolve(args, SELECT_DEFAULTS)
    _require(cfg, ["data"])
    raw = datasets.load_csv(cfg["data"])
    ds = datasets.standardize(raw)
    result = stability.escv_select(
        ds,
        v=cfg["v"],
        seed=cfg["seed"],
        grid_size=cfg["grid_size"],
        path_grid_size=cfg["path_grid_size"],
        floor_ratio=cfg["floor_ratio"],
        jobs=cfg["jobs"],
    )
    out = _outdir(cfg)
    curves = result.curves
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "es", "zsq", "cv_error"])
        for g in range(curves.tau_grid.shape[0]):
            writer.writerow(
                [
                    f"{curves.tau_grid[g]:.17g}",
                    f"{curves.es[g]:.17g}",
                    f"{curves.zsq[g]:.17g}",
                    f"{curves.cv_error[g]:.17g}",
                ]
            )
    _write_coefficients(os.path.join(out, "coefficients_cv.csv"), ds, result.beta_cv)
    _write_coefficients(os.path.join(out, "coefficients_escv.csv"), ds, result.beta_escv)
    intercept_cv, _ = datasets.destandardize_coefficients(ds, result.beta_cv)
    intercept_escv, _ = datasets.destandardize_coefficients(ds, result.beta_escv)
    report = {
        "n": ds.n,
        "p": ds.p,
        "v": curves.v,
        "d": curves.d,
        "tau_cv": result.tau_cv,
        "tau_escv": result.tau_escv,
        "model_size_cv": result.model_size_cv,
        "model_size_escv": result.model_size_escv,
        "escv_fell_back_to_cv": result.escv_fell_back_to_cv,
        "intercept_cv": intercept_cv,
        "intercept_escv": intercept_escv,
        "coefficients_cv": "coefficients_cv.csv",
        "coefficients_escv": "coefficients_escv.csv",
        "holdout_mse_cv": None,
        "holdout_mse_escv": None,
    }
    if cfg["holdout"] is not None:
        report["holdout_mse_cv"] = _holdout_mse(cfg["holdout"], ds, result.beta_cv)
        report["holdout_mse_escv"] = _holdout_mse(cfg["holdout"], ds, result.beta_escv)
    _write_json(os.path.join(out, "report.json"), report)
    _echo_config(cfg, "select", out)
    return 0


REGIME_DEFAULTS = {
    "loss": "l2",
    "dist": "laplace",
    "scale": 1.0,
    "huber_delta": None,
    "kappa": None,          # single value or comma-separated grid
    "crossover": False,
    "kappa_lo": 0.05,
    "kappa_hi": 0.9,
    "out": ".",
}


def cmd_regime(args) -> int:
    cfg = _resolve(args, REGIME_DEFAULTS)
    if cfg["kappa"] is None and not cfg["crossover"]:
        raise UsageError("provide --kappa (value or comma list) or --crossover")
    dist = _dist_from_config(cfg)
    out = _outdir(cfg)
    rows = []
    if cfg["kappa"] is not None:
        kappas = [float(v) for v in str(cfg["kappa"]).split(",")]
        loss = _loss_from_config(cfg)
        for k in kappas:
            sol = regime.solve_system(loss, dist, k)
            rows.append(sol)
    with open(os.path.join(out, "regime.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kappa", "loss", "dist", "scale", "r", "c", "resid_derivative", "resid_moment"]
        )
        for sol in rows:
            writer.writerow(
                [
                    f"{sol.kappa:.17g}",
                    sol.loss.family,
                    dist.kind,
                    f"{cfg['scale']:.17g}",
                    f"{sol.r:.17g}",
                    f"{sol.c:.17g}",
                    f"{sol.residuals[0]:.17g}",
                    f"{sol.residuals[1]:.17g}",
                ]
            )
    if cfg["crossover"]:
        try:
            kstar = regime.find_crossover(dist, cfg["kappa_lo"], cfg["kappa_hi"])
            crossover = {
                "found": True,
                "kappa_star": kstar,
                "kappa_lo": cfg["kappa_lo"],
                "kappa_hi": cfg["kappa_hi"],
            }
        except regime.NoCrossoverError as exc:
            crossover = {
                "found": False,
                "kappa_star": None,
                "kappa_lo": cfg["kappa_lo"],
                "kappa_hi": cfg["kappa_hi"],
                "gap_at_lo": exc.values[0],
                "gap_at_hi": exc.values[1],
            }
        _write_json(os.path.join(out, "crossover.json"), crossover)
    _echo_config(cfg, "regime", out)
    return 0


MC_DEFAULTS = {
    "n": 500,
    "p": None,
    "kappa": None,          # used to derive p when p is not given
    "loss": "l2",
    "dist": "laplace",
    "scale": 1.0,
    "huber_delta": None,
    "replicates": 200,
    "seed": 0,
    "check_theory": False,
    "jobs": 1,
    "out": ".",
}


def cmd_mc(args) -> int:
    cfg = _resolve(args, MC_DEFAULTS)
    if cfg["p"] is None:
        if cfg["kappa"] is None:
            raise UsageError("provide --p or --kappa")
        cfg["p"] = int(round(float(cfg["kappa"]) * cfg["n"]))
    loss = _loss_from_config(cfg)
    dist = _dist_from_config(cfg)
    summary = montecarlo.run_norm_mc(
        cfg["n"], cfg["p"], loss, dist, cfg["replicates"], cfg["seed"], jobs=cfg["jobs"]
    )
    out = _outdir(cfg)
    with open(os.path.join(out, "replicates.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "norm", "converged"])
        for i in range(summary.replicates):
            writer.writerow(
                [i, f"{summary.norms[i]:.17g}", int(summary.converged[i])]
            )
    payload = {
        "n": summary.n,
        "p": summary.p,
        "kappa": [summary.kappa.numerator, summary.kappa.denominator],
        "loss": loss.family,
        "dist": dist.kind,
        "scale": cfg["scale"],
        "replicates": summary.replicates,
        "failures": summary.failures,
        "norm_mean": summary.norm_mean,
        "norm_sd": summary.norm_sd,
        "norm_se": summary.norm_se,
        "theory": None,
    }
    if cfg["check_theory"]:
        sol = regime.solve_system(loss, dist, float(summary.kappa))
        report = montecarlo.compare_theory_mc(summary, sol)
        payload["theory"] = {
            "r": report.r_theory,
            "z_score": report.z_score,
            "passed": report.passed,
        }
        status = "pass" if report.passed else "FAIL"
        print(
            f"{loss.family} kappa={float(summary.kappa):g}: "
            f"mc={report.norm_mean:.6f} +- {report.norm_se:.6f}, "
            f"theory r={report.r_theory:.6f}, z={report.z_score:+.2f} [{status}]"
        )
    _write_json(os.path.join(out, "summary.json"), payload)
    _echo_config(cfg, "mc", out)
    return 0


def _add_common(sub, *names):
    if "out" in names:
        sub.add_argument("--out", help="output directory (default: current)")
    if "seed" in names:
        sub.add_argument("--seed", type=int)
    if "jobs" in names:
        sub.add_argument("--jobs", type=int, help="worker processes (default 1)")
    sub.add_argument("--config", help="JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stabreg",
        description="Estimation-stability Lasso selection and limiting-risk "
        "analysis of M-estimators",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic linear-model dataset")
    gen.add_argument("--n", type=int)
    gen.add_argument("--p", type=int)
    gen.add_argument("--dist", choices=["gaussian", "laplace", "double_exponential"])
    gen.add_argument("--scale", type=float, help="sigma (gaussian) or b (laplace)")
    gen.add_argument("--beta", help="comma-separated true coefficients, length p")
    gen.add_argument("--corr", type=float, help="equicorrelation of the design")
    _add_common(gen, "out", "seed")
    gen.set_defaults(func=cmd_gen)

    sel = sub.add_parser("select", help="ES-CV smoothing-parameter selection for the Lasso")
    sel.add_argument("--data", help="CSV file; response in the first column")
    sel.add_argument("--v", type=int, help="number of blocks (default 10)")
    sel.add_argument("--grid-size", dest="grid_size", type=int)
    sel.add_argument("--path-grid-size", dest="path_grid_size", type=int)
    sel.add_argument("--floor-ratio", dest="floor_ratio", type=float)
    sel.add_argument("--holdout", help="CSV file for held-out prediction error")
    _add_common(sel, "out", "seed", "jobs")
    sel.set_defaults(func=cmd_select)

    reg = sub.add_parser("regime", help="solve the limiting-norm equations")
    reg.add_argument("--loss", choices=sorted(_LOSS_NAMES))
    reg.add_argument("--dist", choices=["gaussian", "laplace", "double_exponential"])
    reg.add_argument("--scale", type=float)
    reg.add_argument("--huber-delta", dest="huber_delta", type=float)
    reg.add_argument("--kappa", help="aspect ratio p/n: single value or comma list")
    reg.add_argument("--crossover", action="store_const", const=True, default=None,
                     help="locate the OLS/LAD crossover aspect ratio")
    reg.add_argument("--kappa-lo", dest="kappa_lo", type=float)
    reg.add_argument("--kappa-hi", dest="kappa_hi", type=float)
    _add_common(reg, "out")
    reg.set_defaults(func=cmd_regime)

    mc = sub.add_parser("mc", help="Monte Carlo check of the limiting norm")
    mc.add_argument("--n", type=int)
    mc.add_argument("--p", type=int)
    mc.add_argument("--kappa", type=float, help="p/n; used to derive p")
    mc.add_argument("--loss", choices=sorted(_LOSS_NAMES))
    mc.add_argument("--dist", choices=["gaussian", "laplace", "double_exponential"])
    mc.add_argument("--scale", type=float)
    mc.add_argument("--huber-delta", dest="huber_delta", type=float)
    mc.add_argument("--replicates", type=int)
    mc.add_argument("--check-theory", dest="check_theory", action="store_const",
                    const=True, default=None)
    _add_common(mc, "out", "seed", "jobs")
    mc.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
