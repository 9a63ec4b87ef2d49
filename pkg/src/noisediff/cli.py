"""Command-line entry point.

Settings come from three layers, later ones winning: built-in defaults, a flat
JSON file given with ``--config``, and explicit flags. The seed falls back to
the ``NOISEDIFF_SEED`` environment variable when neither the config nor the
flags set it.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio, stats
from .interpolate import (InterpolationPlan, noise_diffusion_interpolate, noise_inject_interpolate,
                          plan_from_lambda, slerp_interpolate)
from .mixture import GaussianMixtureModel, template_mixture
from .mlp import TrainConfig, train
from .ode import OdeConfig, SigmaSchedule, decode, encode
from .tensor import NumericalError, make_rng

log = logging.getLogger("noisediff")

DEFAULTS = {
    "sigma_min": 1e-3,
    "sigma_max": 80.0,
    "n_steps": 64,
    "rho": 7.0,
    "lam": 0.5,
    "gamma": math.sqrt(0.1),
    "c": 2.0,
    "k": 2.2,
    "method": "noisediffusion",
    "sigma": None,
    "shared_noise": False,
    "size": 16,
    "components": 4,
    "delta": 0.05,
    "samples": 0,
    "steps": 5000,
    "batch_size": 256,
    "lr": 1e-3,
    "t_min": 1e-3,
    "t_max": 80.0,
    "dataset_size": 4096,
    "baseline": True,
    "suite": "all",
    "trials": None,
    "n": 10_000,
    "denoise_level": None,
    "levels": None,
}


PATH_KEYS = {"seed", "mixture", "checkpoint", "data", "input", "output", "image", "a", "b", "out_dir", "csv",
             "json", "latent"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _schedule_flags(p):
    g = p.add_argument_group("schedule")
    g.add_argument("--sigma-min", dest="sigma_min", type=float)
    g.add_argument("--sigma-max", dest="sigma_max", type=float)
    g.add_argument("--n-steps", dest="n_steps", type=int)
    g.add_argument("--rho", type=float)


def _backend_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mixture", help="mixture spec JSON")
    g.add_argument("--checkpoint", help="score network checkpoint")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat JSON config; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="noisediff", description="Diffusion latent interpolation laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-dataset", parents=[common], help="write a template mixture and its images")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--components", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--samples", type=int, help="also write this many mixture samples")

    p = sub.add_parser("train-score", parents=[common], help="fit the MLP score network")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mixture", help="draw the training set from this mixture")
    src.add_argument("--data", help="NDTN tensor with stacked training samples")
    p.add_argument("--dataset-size", dest="dataset_size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--t-min", dest="t_min", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--no-baseline", dest="baseline", action="store_const", const=False)
    p.add_argument("--output", required=True)

    for name, text in (("encode", "image -> latent at sigma_max"), ("decode", "latent -> image")):
        p = sub.add_parser(name, parents=[common], help=text)
        _backend_flags(p)
        _schedule_flags(p)
        p.add_argument("--input", required=True)
        p.add_argument("--output", required=True)
        p.add_argument("--image", help="also render the result as PGM/PPM")

    p = sub.add_parser("interpolate", parents=[common], help="interpolate two images")
    _backend_flags(p)
    _schedule_flags(p)
    p.add_argument("--a", required=True, help="image at lambda = 0")
    p.add_argument("--b", required=True, help="image at lambda = 1")
    p.add_argument("--output", required=True)
    p.add_argument("--image")
    p.add_argument("--method", choices=["slerp", "noise-inject", "noisediffusion"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--c", type=float, help="compensation scale")
    p.add_argument("--k", type=float, help="clip bound in units of sigma_max; 'inf' disables clipping")
    p.add_argument("--sigma", type=float, help="noise level for --method noise-inject")
    p.add_argument("--shared-noise", dest="shared_noise", action="store_const", const=True)

    p = sub.add_parser("stats", parents=[common], help="run the geometry validation suites")
    _schedule_flags(p)
    p.add_argument("--suite", choices=["all", "norm", "orthogonality", "weighted-norm", "empirical-rule",
                                       "mismatch"])
    p.add_argument("--trials", type=int)
    p.add_argument("--n", type=int, help="dimension")
    p.add_argument("--mixture", help="mixture spec for the mismatch suite")
    p.add_argument("--denoise-level", dest="denoise_level", type=float)
    p.add_argument("--levels", help="comma-separated noise levels for the mismatch suite")
    p.add_argument("--csv", help="write report rows here")
    p.add_argument("--json", help="write the JSON summary here")

    p = sub.add_parser("diagnose", parents=[common], help="sphere-radius ratio of a latent")
    p.add_argument("--latent", required=True)
    p.add_argument("--sigma", type=float, help="defaults to sigma_max")
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    p.add_argument("--json", help="write the result here")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        aliases = {"lambda": "lam"}
        for key, value in loaded.items():
            key = aliases.get(key, key)
            if key not in DEFAULTS and key not in PATH_KEYS:
                raise ValueError(f"config field '{key}' is not recognised")
            cfg[key] = value
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    if cfg.get("seed") is None:
        env = os.environ.get("NOISEDIFF_SEED")
        cfg["seed"] = int(env) if env not in (None, "") else 0
    return cfg


def _schedule(cfg) -> SigmaSchedule:
    return SigmaSchedule(float(cfg["sigma_min"]), float(cfg["sigma_max"]), int(cfg["n_steps"]), float(cfg["rho"]))


def _backend(cfg):
    if cfg.get("mixture"):
        return fileio.read_mixture(cfg["mixture"])
    if cfg.get("checkpoint"):
        return fileio.read_checkpoint(cfg["checkpoint"])
    raise ValueError("a backend is required: pass --mixture or --checkpoint")


def _write_result(cfg, arr) -> None:
    fileio.write_tensor(cfg["output"], arr)
    if cfg.get("image"):
        fileio.write_image(cfg["image"], arr)


def cmd_gen_dataset(cfg) -> None:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg["seed"])
    model = template_mixture(int(cfg["size"]), int(cfg["components"]), rng, float(cfg["delta"]))
    fileio.write_mixture(out / "mixture.json", model)
    for k, c in enumerate(model.centers):
        fileio.write_image(out / f"mixture_center_{k}.pgm", c)
    for i, x in enumerate(model.sample(rng, int(cfg["samples"]))):
        fileio.write_tensor(out / f"sample_{i}.ndtn", x)
        fileio.write_image(out / f"sample_{i}.pgm", x)
    print(out / "mixture.json")


def cmd_train(cfg) -> None:
    rng = make_rng(cfg["seed"])
    if cfg.get("data"):
        data = fileio.read_tensor(cfg["data"])
    elif cfg.get("mixture"):
        data = fileio.read_mixture(cfg["mixture"]).sample(rng, int(cfg["dataset_size"]))
    else:
        raise ValueError("train-score needs --mixture or --data")
    tc = TrainConfig(steps=int(cfg["steps"]), batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
                     t_min=float(cfg["t_min"]), t_max=float(cfg["t_max"]), seed=int(cfg["seed"]),
                     baseline=bool(cfg["baseline"]))
    params, history = train(tc, data, rng, return_history=True)
    fileio.write_checkpoint(cfg["output"], params)
    if history:
        print(f"final loss {np.mean(history[-100:]):.6f}")


def cmd_encode(cfg) -> None:
    ode = OdeConfig(_schedule(cfg), _backend(cfg))
    fileio.write_tensor(cfg["output"], encode(fileio.load_array(cfg["input"]), ode))


def cmd_decode(cfg) -> None:
    ode = OdeConfig(_schedule(cfg), _backend(cfg))
    _write_result(cfg, decode(fileio.load_array(cfg["input"]), ode))


def _plan(cfg) -> InterpolationPlan:
    return plan_from_lambda(float(cfg["lam"]), float(cfg["gamma"]), float(cfg["c"]), float(cfg["k"]))


def cmd_interpolate(cfg) -> None:
    ode = OdeConfig(_schedule(cfg), _backend(cfg))
    xa, xb = fileio.load_array(cfg["a"]), fileio.load_array(cfg["b"])
    rng = make_rng(cfg["seed"])
    method = cfg["method"]
    if method == "slerp":
        out = slerp_interpolate(xa, xb, float(cfg["lam"]), ode)
    elif method == "noise-inject":
        sigma = ode.schedule.sigma_max if cfg.get("sigma") is None else float(cfg["sigma"])
        out = noise_inject_interpolate(xa, xb, float(cfg["lam"]), sigma, bool(cfg["shared_noise"]), rng, ode)
    elif method == "noisediffusion":
        out = noise_diffusion_interpolate(xa, xb, _plan(cfg), rng, ode)
    else:
        raise ValueError(f"unknown method '{method}'")
    _write_result(cfg, out)


SUITE_TRIALS = {"norm": 1000, "orthogonality": 1000, "weighted-norm": 200, "empirical-rule": 1_000_000,
                "mismatch": 64}


def run_suites(cfg) -> list[stats.StatReport]:
    suite, seed, n = cfg["suite"], int(cfg["seed"]), int(cfg["n"])
    names = list(SUITE_TRIALS) if suite == "all" else [suite]
    if suite == "all" and not cfg.get("mixture"):
        names.remove("mismatch")
    reports = []
    for name in names:
        trials = int(cfg["trials"]) if cfg.get("trials") is not None else SUITE_TRIALS[name]
        if name == "norm":
            reports.append(stats.norm_concentration(n, trials, seed))
        elif name == "orthogonality":
            reports.append(stats.orthogonality_stats(n, trials, seed))
        elif name == "weighted-norm":
            plan = _plan(cfg)
            reports.append(stats.weighted_norm_ratio(plan.alpha, plan.beta, plan.gamma, n, trials, seed))
        elif name == "empirical-rule":
            reports.append(stats.empirical_rule_check(trials, seed))
        elif name == "mismatch":
            if not cfg.get("mixture"):
                raise ValueError("the mismatch suite needs --mixture")
            model = fileio.read_mixture(cfg["mixture"])
            sched = _schedule(cfg)
            level = float(cfg["denoise_level"]) if cfg.get("denoise_level") is not None else sched.sigma_max
            levels = ([float(v) for v in str(cfg["levels"]).split(",")] if cfg.get("levels")
                      else [f * level for f in (0.7, 0.875, 1.0, 1.125, 1.25)])
            sched = replace(sched, sigma_max=max(sched.sigma_max, *levels))
            reports.append(stats.mismatch_experiment(model, levels, level, OdeConfig(sched, model), seed, trials))
    return reports


CSV_FIELDS = ["experiment", "seed", "n_samples", "mean", "std", *[f"q{int(q * 100):02d}" for q in stats.QUANTILES],
              "passed", "checks", "values"]


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({"experiment": r.name, "seed": r.seed, "n_samples": r.n_samples, "mean": repr(r.mean),
                    "std": repr(r.std), **{k: repr(v) for k, v in r.quantiles.items()}, "passed": r.passed,
                    "checks": json.dumps(r.checks, sort_keys=True), "values": json.dumps(r.values, sort_keys=True)})
    return buf.getvalue()


def cmd_stats(cfg) -> bool:
    reports = run_suites(cfg)
    text = reports_csv(reports)
    if cfg.get("csv"):
        fileio.atomic_write(cfg["csv"], text.encode())
    if cfg.get("json"):
        summary = {"seed": int(cfg["seed"]), "reports": [r.to_dict() for r in reports]}
        fileio.atomic_write(cfg["json"], (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    sys.stdout.write(text)
    return all(r.passed for r in reports)


def cmd_diagnose(cfg) -> None:
    latent = fileio.read_tensor(cfg["latent"])
    sigma = float(cfg["sigma"]) if cfg.get("sigma") is not None else float(cfg["sigma_max"])
    ratio = stats.sphere_radius_diag(latent, sigma)
    result = {"ratio": ratio, "deviation": abs(ratio - 1.0), "sigma": sigma, "n": int(latent.size)}
    if cfg.get("json"):
        fileio.atomic_write(cfg["json"], (json.dumps(result, indent=2) + "\n").encode())
    print(json.dumps(result))


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train-score": cmd_train,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "interpolate": cmd_interpolate,
    "stats": cmd_stats,
    "diagnose": cmd_diagnose,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
