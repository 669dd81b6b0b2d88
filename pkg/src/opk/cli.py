"""Command-line front end: ``opk {datagen,train,kernel-audit,stability,bound}``.

Configuration is a JSON file (``--config``) overlaid by command-line flags.
Every report embeds the effective configuration and master seed; the only
field that changes between identical runs is ``generated_at``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (reports
are still written).
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .audit import audit_kernel
from .dataset import Dataset
from .datagen import GeneratorSpec, generate
from .hilbert import OutputSpace
from .kernels import KERNEL_KINDS, build_kernel
from .losses import LOSS_KINDS, Loss
from .solvers import SolverError, SolverOptions, fit
from .stability import (
    bound_check,
    holds_fraction,
    loglog_slope,
    run_jobs,
    stability_run,
)

log = logging.getLogger("opk")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DEFAULTS: dict = {
    "seed": 0,
    "space": {"kind": "l2", "interval": [0.0, 1.0], "n": 33},
    "generator": {"kind": "linear_functional", "m": 50, "noise_sd": 0.1, "clip_C_y": 1.0},
    "kernel": {"kind": "identity", "scalar": {"kind": "gaussian", "bandwidth": 1.0}, "params": {}},
    "loss": {"kind": "square"},
    "lambda": 0.1,
    "lambda_grid": None,
    "m_list": None,
    "seeds": None,
    "delta": 0.05,
    "deltas": None,
    "probes": 200,
    "reps": 50,
    "mc_samples": 2000,
    "beta_override": None,
    "audit_kernels": None,
    "audit_trials": 100,
    "resolutions": [32, 64, 128, 256],
    "solver": {"max_iters": 5000, "step0": 1.0, "tol": 1e-7, "method": "auto"},
    "dataset": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def effective_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    flags = {
        "seed": args.seed,
        "lambda": args.lam,
        "delta": args.delta,
        "probes": args.probes,
        "reps": args.reps,
        "mc_samples": args.mc_samples,
        "dataset": args.dataset,
        "beta_override": args.beta_override,
    }
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    if args.m is not None:
        cfg["generator"]["m"] = args.m
    if args.kernel is not None:
        if args.kernel != cfg["kernel"].get("kind"):
            cfg["kernel"] = {"kind": args.kernel, "scalar": cfg["kernel"].get("scalar", {"kind": "gaussian"}), "params": {}}
    if args.loss is not None:
        cfg["loss"] = {"kind": args.loss}
    if args.epsilon is not None:
        cfg["loss"]["epsilon"] = args.epsilon
    if args.loss == "logistic" and cfg["generator"].get("kind") in ("linear_functional", "nonlinear_functional"):
        cfg["generator"]["kind"] = "logistic_pairs"
    cfg["generator"]["seed"] = cfg["seed"]
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    def positive(name, v):
        if v is None or not float(v) > 0:
            raise ConfigError(f"{name} must be positive, got {v!r}")

    positive("lambda", cfg["lambda"])
    for lam in cfg.get("lambda_grid") or []:
        positive("lambda_grid entry", lam)
    if not 0.0 < float(cfg["delta"]) < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    for d in cfg.get("deltas") or []:
        if not 0.0 < float(d) < 1.0:
            raise ConfigError("every delta must lie in (0, 1)")
    for key in ("probes", "reps", "mc_samples"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be >= 1")
    if cfg["kernel"].get("kind") not in KERNEL_KINDS:
        raise ConfigError(f"unknown kernel {cfg['kernel'].get('kind')!r}")
    if cfg["loss"].get("kind") not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {cfg['loss'].get('kind')!r}")
    try:
        space = OutputSpace.from_dict(cfg["space"])
        gen = GeneratorSpec.from_dict(cfg["generator"])
        gen.check_space(space)
        build_kernel(cfg["kernel"], space, gen.input_space(space))
        Loss.from_spec(cfg["loss"])
        SolverOptions.from_dict(cfg["solver"])
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e)) from e


# -- report writing -------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def report_text(command: str, cfg: dict, results, generated_at: str | None = None) -> str:
    body = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "results": results,
        "generated_at": generated_at or _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    return json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n"


def strip_timestamp(text: str) -> dict:
    d = json.loads(text)
    d.pop("generated_at", None)
    return d


def csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(_jsonable(r))
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


# -- building blocks from the config ---------------------------------------------


def _space(cfg):
    return OutputSpace.from_dict(cfg["space"])


def _gen(cfg, **changes):
    d = dict(cfg["generator"])
    d.update(changes)
    return GeneratorSpec.from_dict(d)


def _kernel(cfg, space, gen):
    return build_kernel(cfg["kernel"], space, gen.input_space(space))


def _lambdas(cfg):
    return [float(x) for x in (cfg.get("lambda_grid") or [cfg["lambda"]])]


def _seeds(cfg):
    return [int(s) for s in (cfg.get("seeds") or [cfg["seed"]])]


def _ms(cfg):
    return [int(m) for m in (cfg.get("m_list") or [cfg["generator"]["m"]])]


# -- commands -------------------------------------------------------------------


def cmd_datagen(cfg: dict, out: Path, workers: int) -> int:
    space = _space(cfg)
    Z = generate(_gen(cfg), space)
    Z.meta["config"] = cfg
    _write(out, "dataset.json", Z.to_json())
    return 0


def cmd_train(cfg: dict, out: Path, workers: int) -> int:
    space = _space(cfg)
    gen = _gen(cfg)
    if cfg.get("dataset"):
        Z = Dataset.load(cfg["dataset"])
        space = Z.space
        K = build_kernel(cfg["kernel"], space, Z.input_space)
    else:
        Z = generate(gen, space)
        K = _kernel(cfg, space, gen)
    loss = Loss.from_spec(cfg["loss"])
    opts = SolverOptions.from_dict(cfg["solver"])
    rows, ok = [], True
    for lam in _lambdas(cfg):
        model = fit(K, Z, lam, loss, opts)
        ok &= bool(model.solver_log.get("converged", True))
        rows.append(
            {
                "lambda": lam,
                "R_emp": model.empirical_risk(Z),
                "rkhs_norm": model.rkhs_norm(),
                "objective": model.objective(Z),
                "iterations": model.solver_log.get("iterations"),
                "converged": model.solver_log.get("converged"),
            }
        )
        name = "model.json" if len(_lambdas(cfg)) == 1 else f"model_lambda_{lam:g}.json"
        _write(out, name, json.dumps(_jsonable(model.to_dict()), sort_keys=True))
    _write(out, "train_report.json", report_text("train", cfg, {"rows": rows}))
    _write(out, "train.csv", csv_text(rows))
    return 0 if ok else EXIT_NUMERIC


def cmd_kernel_audit(cfg: dict, out: Path, workers: int) -> int:
    space = _space(cfg)
    gen = _gen(cfg)
    specs = cfg.get("audit_kernels") or [cfg["kernel"]]
    results = []
    for spec in specs:
        K = build_kernel(spec, space, gen.input_space(space))
        results.append(audit_kernel(K, seed=cfg["seed"], trials=int(cfg["audit_trials"]), resolutions=cfg["resolutions"]))
    _write(out, "kernel_audit.json", report_text("kernel-audit", cfg, results))
    ok = all(r["hermitian_ok"] and r["psd_ok"] and r["kappa_ok"] and r["pointwise_ok"] for r in results)
    return 0 if ok else EXIT_NUMERIC


def _stability_cell(args):
    cfg, lam, m, seed = args
    space = _space(cfg)
    loss = Loss.from_spec(cfg["loss"])
    gen = _gen(cfg, m=m, seed=seed)
    K = _kernel(cfg, space, gen)
    return stability_run(K, gen, space, loss, lam, int(cfg["probes"]), SolverOptions.from_dict(cfg["solver"]))


def cmd_stability(cfg: dict, out: Path, workers: int) -> int:
    cells = [(cfg, lam, m, s) for lam in _lambdas(cfg) for m in _ms(cfg) for s in _seeds(cfg)]
    reports = run_jobs(_stability_cell, cells, workers)
    rows, results = [], []
    for (_, lam, m, seed), rep in zip(cells, reports):
        results.append({"lambda": lam, "m": m, "seed": seed, "report": rep.to_dict()})
        rows.append(
            {
                "kernel": cfg["kernel"]["kind"],
                "loss": rep.algo,
                "lambda": lam,
                "m": m,
                "seed": seed,
                "kappa": rep.kappa,
                "C": rep.C,
                "beta_theoretical": rep.beta_theoretical,
                "beta_empirical": rep.beta_empirical,
                "perturbation_max": max(rep.perturbation_norms),
                "perturbation_bound": rep.perturbation_bound,
                "holds": rep.holds,
                "valid": rep.valid,
            }
        )
    summary: dict = {"cells": results}
    ms = _ms(cfg)
    if len(ms) >= 3:
        curves = {}
        for lam in _lambdas(cfg):
            med = [float(np.median([r["beta_empirical"] for r in rows if r["m"] == m and r["lambda"] == lam])) for m in ms]
            curves[f"{lam:g}"] = {"m_list": ms, "medians": med, "slope": loglog_slope(ms, med)}
        summary["scaling"] = curves
    _write(out, "stability_report.json", report_text("stability", cfg, summary))
    _write(out, "stability.csv", csv_text(rows))
    ok = all(r["valid"] for r in rows)
    return 0 if ok else EXIT_NUMERIC


def cmd_bound(cfg: dict, out: Path, workers: int) -> int:
    space = _space(cfg)
    gen = _gen(cfg)
    K = _kernel(cfg, space, gen)
    loss = Loss.from_spec(cfg["loss"])
    opts = SolverOptions.from_dict(cfg["solver"])
    deltas = [float(d) for d in (cfg.get("deltas") or [cfg["delta"]])]
    rows, results = [], []
    for delta in deltas:
        reps = bound_check(K, gen, space, loss, _lambdas(cfg)[0], delta, int(cfg["reps"]), int(cfg["mc_samples"]), opts, workers, cfg.get("beta_override"))
        results.append({"delta": delta, "holds_fraction": holds_fraction(reps), "reports": [r.to_dict() for r in reps]})
        rows.extend({"delta": delta, **r.to_dict()} for r in reps)
    _write(out, "bound_report.json", report_text("bound", cfg, results))
    _write(out, "bound.csv", csv_text(rows))
    return 0


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "kernel-audit": cmd_kernel_audit,
    "stability": cmd_stability,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opk", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="opk_out", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default $OPK_WORKERS or 1)")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--probes", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--kernel", choices=KERNEL_KINDS)
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dataset", help="dataset JSON for train")
    p.add_argument("--beta-override", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    workers = args.workers if args.workers is not None else int(os.environ.get("OPK_WORKERS", "1"))
    try:
        cfg = effective_config(args)
    except ConfigError as e:
        print(f"opk: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, Path(args.out), max(1, workers))
    except SolverError as e:
        print(f"opk: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
