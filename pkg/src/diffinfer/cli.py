"""Command-line entry point: ``diffinfer <command> --config cfg.json --out-dir DIR``.

Exit codes: 0 success, 1 failed checks, 2 configuration error, 3 data error,
4 numerical divergence.
"""
import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import tempfile

import numpy as np
import scipy

from . import kernels
from .checks import run_suites
from .data import (ColumnSchema, SplitSpec, load_csv, one_hot, pools_csv, real_data_run,
                   row_seed)
from .diffusion import make_schedule
from .errors import ConfigError, DataError, DiffInferError
from .experiments import SimulationSpec, gen_dataset, run_replications
from .inference import (confidence_interval, intervals_csv, prediction_interval,
                        sample_moments)
from .sampler import generate
from .training import TrainConfig, TrainedModel, loss_trace_csv, train

log = logging.getLogger("diffinfer")

SCHEDULE_DEFAULTS = {"T0": 0.01, "T": 3.0, "N": 200, "spacing": "uniform"}

COMMAND_KEYS = {
    "simulate": {f.name for f in dataclasses.fields(SimulationSpec)},
    "train": {"data", "synthetic", "schema", "train_config", "seed"},
    "generate": {"model", "points", "M", "schedule", "seed"},
    "infer": {"model", "points", "M", "alpha", "schedule", "truth", "samples", "seed"},
    "real-data": {"data", "schema", "split", "train_config", "schedule", "M", "alpha", "seed"},
    "oracle-check": {"suites", "seed"},
}


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    return d


def _dataclass_from(cls, d, where):
    names = {f.name for f in dataclasses.fields(cls)}
    _strict(d, names, where)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _train_config(d, seed):
    d = dict(d or {})
    d.setdefault("seed", seed)
    return _dataclass_from(TrainConfig, d, "train_config")


def _schedule(d):
    d = {**SCHEDULE_DEFAULTS, **_strict(d or {}, SCHEDULE_DEFAULTS, "schedule")}
    return make_schedule(d["T0"], d["T"], d["N"], d["spacing"])


def _schema(d):
    if d is None:
        raise ConfigError("a 'schema' with target_columns is required")
    return _dataclass_from(ColumnSchema, d, "schema")


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing required config key {k!r}")


def _points(cfg):
    pts = np.atleast_2d(np.asarray(cfg["points"], dtype=float))
    if not np.all(np.isfinite(pts)):
        raise ConfigError("points must be finite")
    return pts


def write_atomic(path, text):
    """Write ``text`` to a temporary file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return TrainedModel.from_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from None


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_simulate(cfg, seed, args):
    cfg = dict(cfg)
    cfg["master_seed"] = seed
    if args.shared_model:
        cfg["training"] = "shared"
    tc = cfg.pop("train_config", {"val_fraction": 0.0})
    spec = SimulationSpec(**cfg, train_config=_train_config(tc, seed))
    report = run_replications(spec)
    return {"simulation.csv": report.to_csv(), "simulation.json": report.to_json()}, spec.to_dict()


def cmd_train(cfg, seed, args):
    tc = _train_config(cfg.get("train_config"), seed)
    mapping = None
    if "data" in cfg:
        table = load_csv(cfg["data"], _schema(cfg.get("schema")))
        ds, mapping = one_hot(table)
    elif "synthetic" in cfg:
        syn = _strict(cfg["synthetic"], {"model_id", "n"}, "synthetic")
        ds = gen_dataset(syn.get("model_id", "I"), int(syn.get("n", 2000)),
                         np.random.default_rng(seed))
    else:
        raise ConfigError("train needs 'data' (CSV path) or 'synthetic'")
    model = train(ds, tc)
    blob = model.to_dict()
    if mapping is not None:
        blob["one_hot"] = mapping.to_dict()
    return {"model.json": _json(blob), "loss_trace.csv": loss_trace_csv(model.loss_trace)}, {
        **cfg, "train_config": tc.to_dict()}


def cmd_generate(cfg, seed, args):
    _require(cfg, "model", "points")
    model = _load_model(cfg["model"])
    sched = _schedule(cfg.get("schedule"))
    M = int(cfg.get("M", 100))
    lines = ["point,sample_index," + ",".join(f"y{j + 1}" for j in range(model.d_y))]
    for i, x in enumerate(_points(cfg)):
        s = generate(model, x, sched, M, row_seed(seed, i))
        lines += [f"{i},{k}," + ",".join(repr(float(v)) for v in row) for k, row in enumerate(s)]
    return {"samples.csv": "\n".join(lines) + "\n"}, {**cfg, "schedule": sched.to_dict()}


def _sample_pools(path):
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read samples file {path}: {exc}") from None
    except ValueError as exc:
        raise DataError(f"malformed samples file {path}: {exc}") from None
    if header[:2] != ["point", "sample_index"]:
        raise DataError("samples file must come from the generate command")
    pts = data[:, 0].astype(int)
    return [data[pts == p, 2:] for p in np.unique(pts)]


def cmd_infer(cfg, seed, args):
    alpha = float(cfg.get("alpha", 0.05))
    if "samples" in cfg:
        pools = _sample_pools(cfg["samples"])
    else:
        _require(cfg, "model", "points")
        model = _load_model(cfg["model"])
        sched = _schedule(cfg.get("schedule"))
        M = int(cfg.get("M", 100))
        pools = [generate(model, x, sched, M, row_seed(seed, i))
                 for i, x in enumerate(_points(cfg))]
    truth = cfg.get("truth")
    if truth is not None and len(truth) != len(pools):
        raise ConfigError("truth needs one value per point")
    rows = []
    for i, s in enumerate(pools):
        mom = sample_moments(s)
        tv = None if truth is None else float(truth[i])
        for c in range(s.shape[1]):
            rows.append((i, confidence_interval(mom, alpha, c), tv))
            rows.append((i, prediction_interval(mom, alpha, c), None))
    return {"intervals.csv": intervals_csv(rows)}, cfg


def cmd_real_data(cfg, seed, args):
    _require(cfg, "data", "schema")
    sp = dict(cfg.get("split", {}))
    sp.setdefault("seed", seed)
    split_spec = _dataclass_from(SplitSpec, sp, "split")
    tc = _train_config(cfg.get("train_config"), seed)
    sched = _schedule(cfg.get("schedule"))
    res = real_data_run(cfg["data"], _schema(cfg["schema"]), split_spec, tc, sched,
                        int(cfg.get("M", 100)), float(cfg.get("alpha", 0.05)), seed)
    return {
        "intervals.csv": intervals_csv(res.intervals),
        "coverage.json": _json(res.coverage_summary()),
        "sample_pools.csv": pools_csv(res),
    }, {**cfg, "train_config": tc.to_dict(), "schedule": sched.to_dict(),
        "split": dataclasses.asdict(split_spec)}


def cmd_oracle_check(cfg, seed, args):
    rows = run_suites(cfg.get("suites"), seed=seed)
    lines = ["suite,check,value,threshold,passed"]
    lines += [f"{r.suite},{r.name},{r.value!r},{r.threshold!r},{int(r.passed)}" for r in rows]
    for r in rows:
        print(r.line())
    args.failed = not all(r.passed for r in rows)
    return {"oracle_checks.csv": "\n".join(lines) + "\n"}, cfg


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "generate": cmd_generate,
    "infer": cmd_infer,
    "real-data": cmd_real_data,
    "oracle-check": cmd_oracle_check,
}


def build_parser():
    p = argparse.ArgumentParser(prog="diffinfer",
                                description="Conditional diffusion models for statistical inference")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="overrides any seed in the config")
        sp.add_argument("--out-dir", default=".", help="directory for outputs")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            sp.add_argument("--shared-model", action="store_true",
                            help="train once and replicate only the sampling stage")
    return p


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _versions():
    from importlib.metadata import PackageNotFoundError, version
    try:
        own = version("diffinfer")
    except PackageNotFoundError:
        own = "unknown"
    return {"diffinfer": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "backend": kernels.BACKEND}


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.failed = False
    cfg = _strict(_read_config(args.config), COMMAND_KEYS[args.command], "config")
    if args.command == "simulate":
        seed = args.seed if args.seed is not None else cfg.get("master_seed", 0)
    else:
        seed = args.seed if args.seed is not None else cfg.pop("seed", 0)
        cfg.pop("seed", None)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    os.makedirs(args.out_dir, exist_ok=True)
    outputs, effective = COMMANDS[args.command](cfg, seed, args)
    for name, text in outputs.items():
        write_atomic(os.path.join(args.out_dir, name), text)
    manifest = {"command": args.command, "seed": seed, "config": effective,
                "outputs": sorted(outputs), "versions": _versions()}
    write_atomic(os.path.join(args.out_dir, "run_manifest.json"), _json(manifest))
    return 1 if args.failed else 0


def main(argv=None):
    try:
        return run(argv)
    except DiffInferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
