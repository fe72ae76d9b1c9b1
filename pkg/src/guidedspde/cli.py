"""Command-line entry point: ``guidedspde simulate|filter|smooth|infer|compare``.

Exit codes: 0 on success, 2 on configuration or dataset schema errors, 3 on
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .amari import AmariModel
from .filtering import FLAVORS, FilterConfig, run_filter
from .io import render_heatmap, write_dump, write_matrix_csv
from .observation import Dataset, generate_dataset
from .smoothing import THETA_BOUNDS, SmootherConfig, run_smoother
from .ukf import run_ukf

logger = logging.getLogger("guidedspde")

EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "model": _obj({
        "domain_length": _POS, "M": _INT, "amp": _NUM, "B": _POS, "eta": _NUM, "zeta": _NUM,
        "delta": _NUM, "sigma0": _POS, "rho0": _POS, "eta0": _POS, "rate": _POS,
        "scaled_frequencies": {"type": "boolean"},
        "x0": {"type": "array", "items": _NUM},
    }),
    "observation": _obj({
        "times": {"type": "array", "items": _POS, "minItems": 1},
        "T": _POS, "n": _INT, "m": _INT, "cell_width": _POS, "sigma_scale": _POS, "subsample": _INT,
    }),
    "simulation": _obj({"dt": _POS}),
    "filter": _obj({
        "flavor": {"enum": list(FLAVORS) + ["ukf"]}, "J": _INT,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n_move": {"type": "integer", "minimum": 0}, "beta": {"type": "number", "minimum": 0, "maximum": 1},
        "tempering": {"type": "boolean"}, "keep_paths": {"type": "boolean"},
        "flavors": {"type": "array", "items": {"enum": list(FLAVORS) + ["ukf"]}, "minItems": 1},
        "ukf": _obj({"alpha": _POS, "beta": _NUM, "kappa": _NUM}),
    }),
    "smoother": _obj({
        "N": _INT, "burn_in": {"type": "integer", "minimum": 0},
        "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "beta0": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "x0_known": {"type": "boolean"}, "thinning": _INT, "s0": _NUM, "keep_last": _INT,
        "max_samples": {"type": "integer", "minimum": 0},
        "init": {"oneOf": [{"enum": ["lower", "upper", "middle", "truth"]},
                           _obj({k: _NUM for k in THETA_BOUNDS})]},
    }),
    "output": _obj({"heatmaps": {"type": "boolean"}, "upscale": _INT}),
})


class SchemaError(Exception):
    pass


def validate_config(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"config error at {where}: {exc.message}") from exc
    return doc


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def save_config(doc: dict, path) -> None:
    validate_config(doc)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_dataset(path) -> Dataset:
    if path is None:
        raise SchemaError("this command needs --data")
    try:
        return Dataset.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"dataset {path}: {exc}") from exc


def _observation_times(obs: dict) -> np.ndarray:
    if "times" in obs:
        return np.asarray(obs["times"], dtype=float)
    T, n = obs.get("T", 20.0), obs.get("n", 20)
    return T / n * np.arange(1, n + 1)


def _prepare(cfg: dict, ds: Dataset):
    every = cfg.get("observation", {}).get("subsample", 1)
    if every > 1:
        ds = ds.subsample(every)
    overrides = {k: v for k, v in cfg.get("model", {}).items() if k not in ("domain_length", "M", "x0")}
    problem = ds.problem(cfg.get("simulation", {}).get("dt"), **overrides)
    return ds, problem


def _heatmap(cfg, matrix, path):
    out = cfg.get("output", {})
    if out.get("heatmaps", True):
        render_heatmap(matrix, path, upscale=out.get("upscale", 1))


def cmd_simulate(cfg: dict, args) -> dict:
    model_cfg = dict(cfg.get("model", {}))
    x0 = model_cfg.pop("x0", None)
    model = AmariModel(**model_cfg)
    obs = cfg.get("observation", {})
    dt = cfg.get("simulation", {}).get("dt", 0.02)
    ds, path = generate_dataset(model, _observation_times(obs), dt, args.seed, m=obs.get("m", 15),
                                cell_width=obs.get("cell_width", 1.0), sigma_scale=obs.get("sigma_scale", 0.01),
                                x0=x0)
    out = Path(args.out)
    ds.save(out / "dataset.json")
    ds.write_csv(out / "observations.csv")
    grid = model.grid()
    times = ds.problem().time_grid.all_times()
    write_dump(out / "truth.bin", {"times": times, "modes": path})
    _heatmap(cfg, grid.to_field(path), out / "truth.png")
    return {"dataset": str(out / "dataset.json")}


def _run_flavor(cfg: dict, problem, flavor: str, seed: int, workers: int):
    fcfg = dict(cfg.get("filter", {}))
    if flavor == "ukf":
        u = fcfg.get("ukf", {})
        return run_ukf(problem, u.get("alpha", 1e-3), u.get("beta", 2.0), u.get("kappa", 0.0))
    keys = ("J", "alpha", "n_move", "beta", "tempering", "keep_paths")
    return run_filter(problem, FilterConfig(flavor=flavor, seed=seed, workers=workers,
                                            **{k: fcfg[k] for k in keys if k in fcfg}))


def cmd_filter(cfg: dict, args) -> dict:
    ds, problem = _prepare(cfg, load_dataset(args.data))
    flavor = args.flavor or cfg.get("filter", {}).get("flavor", "gpf1")
    res = _run_flavor(cfg, problem, flavor, args.seed, args.workers)
    out = Path(args.out)
    files = res.save(out)
    grid = problem.grid
    mp = res.mean_path()
    _heatmap(cfg, grid.to_field(mp if mp is not None else res.means), out / f"{flavor}_reconstruction.png")
    return {k: str(v) for k, v in files.items()}


def cmd_compare(cfg: dict, args) -> dict:
    ds, problem = _prepare(cfg, load_dataset(args.data))
    flavors = cfg.get("filter", {}).get("flavors", ["gpf1", "gpf2", "bootstrap", "ukf"])
    if problem.truth is None:
        raise SchemaError("compare needs a dataset with the true states (x_true)")
    out = Path(args.out)
    columns = [problem.times]
    for fl in flavors:
        res = _run_flavor(cfg, problem, fl, args.seed, args.workers)
        res.save(out)
        columns.append(res.errors)
    write_matrix_csv(out / "compare_errors.csv", np.column_stack(columns), header=["t", *flavors])
    return {"table": str(out / "compare_errors.csv")}


def _theta_init(init, ds: Dataset) -> dict:
    if isinstance(init, dict):
        return {k: init.get(k, 0.5 * sum(THETA_BOUNDS[k])) for k in THETA_BOUNDS}
    if init == "truth":
        return {k: ds.theta_true[k] for k in THETA_BOUNDS}
    pick = {"lower": 0, "upper": 1}
    if init in pick:
        return {k: b[pick[init]] for k, b in THETA_BOUNDS.items()}
    return {k: 0.5 * (lo + hi) for k, (lo, hi) in THETA_BOUNDS.items()}


def _run_chain(cfg: dict, args, infer: bool) -> dict:
    ds, problem = _prepare(cfg, load_dataset(args.data))
    scfg = dict(cfg.get("smoother", {}))
    init = scfg.pop("init", "middle" if infer else "truth")
    config = SmootherConfig(infer_theta=infer, seed=args.seed, **scfg)
    if infer:
        theta0 = _theta_init(init, ds)
    else:
        theta0 = {k: getattr(problem.drift.params, k) for k in THETA_BOUNDS}
    res = run_smoother(problem, config, theta0=theta0)
    out = Path(args.out)
    prefix = "infer" if infer else "smooth"
    files = res.save(out, prefix)
    _heatmap(cfg, problem.grid.to_field(res.mean_path), out / f"{prefix}_mean_path.png")
    return {k: str(v) for k, v in files.items()}


def cmd_smooth(cfg: dict, args) -> dict:
    return _run_chain(cfg, args, infer=False)


def cmd_infer(cfg: dict, args) -> dict:
    return _run_chain(cfg, args, infer=True)


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "smooth": cmd_smooth,
            "infer": cmd_infer, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidedspde", description="Guided filtering and smoothing for the stochastic Amari model.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data", help="dataset JSON written by 'simulate'")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--flavor", choices=list(FLAVORS) + ["ukf"])
    p.add_argument("--workers", type=int, default=1, help="concurrency cap; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.get("seed", 0)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, args)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        # checked first: LinAlgError derives from ValueError
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    for k, v in files.items():
        print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
