"""Command-line entry point.

Subcommands
-----------
simulate   replicate a table cell (or a whole preset grid) and write reports
estimate   fit a GLM to a CSV file, or to data held by running workers
test       likelihood ratio test that some coefficients equal given values
worker     serve one shard over TCP until SIGTERM
generate   write a simulated or SYNTHETIC airline-like CSV file

Exit codes are listed in :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import signal
import sys
import threading
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from . import __version__
from .dataio import (
    AIRLINE_COLUMNS,
    AIRLINE_COVARIATES,
    CsvDataset,
    DataParseError,
    UnknownColumnError,
    load_csv,
    synthetic_airline,
    write_csv,
    write_synthetic_airline,
)
from .errors import (
    AggregationError,
    ConfigurationError,
    ExperimentError,
    GlmError,
    NotPositiveDefiniteError,
    OneShotUnavailableError,
    PilotTooSmallError,
    ShapeError,
    SingularInformationError,
)
from .estimators import EstimatorKind, global_estimate, pilot_estimate, run_csl, run_one_shot
from .glm import DataShard, Family, chol_solve
from .inference import (
    Hypothesis,
    TestMethod,
    lrt_global,
    lrt_oneshot,
    lrt_pilot,
    lrt_subvector_onestep,
)
from .runtime import Worker, WorkerServer, in_process_session, tcp_session
from .runtime.master import run_one_step_protocol
from .sharding import Strategy, make_plan
from .simulation import (
    LRT_METHODS,
    PRESET_GRIDS,
    PRESETS,
    SimConfig,
    default_beta_alt,
    generate,
    run_estimation_experiment,
    run_lrt_experiment,
)

log = logging.getLogger("onestep_glm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXPERIMENT = 3
EXIT_PARSE = 4
EXIT_SINGULAR = 5
EXIT_UNREACHABLE = 6
EXIT_ESTIMATION = 7
EXIT_BIND = 8

EXIT_CODES = {
    EXIT_OK: "success",
    EXIT_CONFIG: "bad flags or configuration (including unknown columns)",
    EXIT_EXPERIMENT: "simulation failed (too many failed replications)",
    EXIT_PARSE: "input data unreadable or unparsable",
    EXIT_SINGULAR: "rank-deficient or singular information",
    EXIT_UNREACHABLE: "a worker is unreachable or failed",
    EXIT_ESTIMATION: "estimation failed otherwise (no convergence, failed local fits)",
    EXIT_BIND: "worker could not listen on the requested address",
}

#: environment variable naming the default ``simulate --config`` file
CONFIG_ENV = "ONESTEP_GLM_CONFIG"

_ESTIMATOR_NAMES = ["GO", "OS", "CSL", "Pilot", "One-Step"]
_METHOD_NAMES = [m.value for m in TestMethod]
_SHARDINGS = ["random", "nonrandom", "both"]

#: JSON schema of a ``simulate`` configuration file
RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["estimation", "testing"]},
        "preset": {"enum": sorted(PRESETS)},
        "family": {"enum": ["logistic", "poisson"]},
        "beta_true": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "covariate_law": {"enum": ["std_normal", "uniform01", "intercept_uniform01"]},
        "cells": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["N", "K", "p"],
                "properties": {
                    "N": {"type": "integer", "minimum": 1},
                    "K": {"type": "integer", "minimum": 1},
                    "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "sharding": {"enum": _SHARDINGS},
                },
            },
        },
        "grid": {"type": "boolean"},
        "sharding": {"enum": _SHARDINGS},
        "estimators": {"type": "array", "items": {"enum": _ESTIMATOR_NAMES}, "minItems": 1},
        "methods": {"type": "array", "items": {"enum": _METHOD_NAMES}, "minItems": 1},
        "hypothesis": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "prefixItems": [{"type": "integer", "minimum": 0}, {"type": "number"}],
                      "minItems": 2, "maxItems": 2},
        },
        "beta_alt": {"type": "number"},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "replications": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "transport": {"enum": ["inprocess", "tcp"]},
        "force_csl": {"type": "boolean"},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def _emit(obj, out: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _floats(v) -> list:
    return [float(x) for x in np.asarray(v, dtype=float)]


def _parse_cell(text: str) -> dict:
    """``N=10000,K=5,p=0.10[,sharding=nonrandom]``."""
    cell = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep:
            raise CliError(f"--cell: expected key=value, got {part!r}", EXIT_CONFIG)
        try:
            if key in ("N", "K"):
                cell[key] = int(value)
            elif key == "p":
                cell[key] = float(value)
            elif key == "sharding":
                cell[key] = value.strip()
            else:
                raise CliError(f"--cell: unknown key {key!r} (use N, K, p, sharding)", EXIT_CONFIG)
        except ValueError:
            raise CliError(f"--cell: bad value for {key}: {value!r}", EXIT_CONFIG) from None
    missing = {"N", "K", "p"} - set(cell)
    if missing:
        raise CliError(f"--cell: missing {sorted(missing)}", EXIT_CONFIG)
    return cell


def load_run_config(path: str) -> dict:
    """Read and validate a RunConfig JSON file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"config file {path}: {exc.strerror or exc}", EXIT_CONFIG) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: invalid JSON ({exc})", EXIT_CONFIG) from None
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise CliError(f"config file {path}: field {where}: {exc.message}", EXIT_CONFIG) from None
    return doc


# ------------------------------------------------------------------ simulate


def _resolve_simulation(args) -> dict:
    config_path = args.config or os.environ.get(CONFIG_ENV)
    doc = load_run_config(config_path) if config_path else {}
    flags = {
        "mode": args.mode, "preset": args.preset, "sharding": args.sharding,
        "replications": args.reps, "base_seed": args.seed, "transport": args.transport,
        "beta_alt": args.beta_alt, "alpha": args.alpha, "threads": args.threads, "out": args.out,
        "tol": args.tol, "max_iter": args.max_iter,
    }
    for key, value in flags.items():
        if value is not None:
            doc[key] = value
    if args.cell:
        doc["cells"] = [_parse_cell(c) for c in args.cell]
    if args.grid:
        doc["grid"] = True
    if args.estimators:
        doc["estimators"] = [e.strip() for e in args.estimators.split(",")]
    if args.methods:
        doc["methods"] = [m.strip() for m in args.methods.split(",")]
    if args.force_csl:
        doc["force_csl"] = True
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise CliError(f"field {where}: {exc.message}", EXIT_CONFIG) from None

    preset = PRESETS.get(doc.get("preset"), {})
    for key in ("family", "beta_true", "covariate_law"):
        if key not in doc:
            if key not in preset:
                raise CliError(f"field {key}: required when no preset is given", EXIT_CONFIG)
            value = preset[key]
            doc[key] = value.value if hasattr(value, "value") else list(value) if key == "beta_true" else value
    doc.setdefault("mode", preset.get("mode", "estimation"))
    if "mode" in preset and doc["mode"] != preset["mode"]:
        raise CliError(f"field mode: preset {doc['preset']} is a {preset['mode']} preset", EXIT_CONFIG)
    if doc.get("grid"):
        if "preset" not in doc:
            raise CliError("field grid: needs a preset", EXIT_CONFIG)
        doc["cells"] = [{"N": N, "K": K, "p": p} for N, K, p in PRESET_GRIDS[doc["preset"]]]
    if not doc.get("cells"):
        raise CliError("field cells: give --cell N=..,K=..,p=.. or --grid", EXIT_CONFIG)
    if not doc.get("out"):
        raise CliError("field out: an output directory is required", EXIT_CONFIG)
    return doc


def _sim_configs(doc: dict) -> List[SimConfig]:
    default_sharding = doc.get("sharding", "random")
    configs = []
    for cell in doc["cells"]:
        sharding = cell.get("sharding", default_sharding)
        for s in (("random", "nonrandom") if sharding == "both" else (sharding,)):
            try:
                configs.append(SimConfig(
                    family=doc["family"], beta_true=doc["beta_true"], N=cell["N"], K=cell["K"],
                    pilot_fraction=cell["p"], sharding=s,
                    estimators=doc.get("estimators", _ESTIMATOR_NAMES),
                    replications=doc.get("replications", 500), base_seed=doc.get("base_seed", 0),
                    covariate_law=doc["covariate_law"], force_csl=doc.get("force_csl", False),
                    transport=doc.get("transport", "inprocess"),
                    tol=doc.get("tol", 1e-8), max_iter=doc.get("max_iter", 100),
                ))
            except (ConfigurationError, ShapeError) as exc:
                raise CliError(f"cell {cell}: {exc}", EXIT_CONFIG) from None
    return configs


def _write_reports(out_dir: Path, reports) -> None:
    """report.csv (one row per label and cell), table.csv (one row per cell), raw.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(_dict_csv([row for r in reports for row in r.csv_rows()]),
                                        encoding="utf-8")
    (out_dir / "table.csv").write_text(_dict_csv([r.wide_row() for r in reports]), encoding="utf-8")
    raw = "[\n" + ",\n".join(r.raw_json() for r in reports) + "\n]\n"
    (out_dir / "raw.json").write_text(raw, encoding="utf-8")


def _dict_csv(rows) -> str:
    keys: list = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_simulate(args) -> int:
    if args.print_schema:
        sys.stdout.write(json.dumps(RUN_CONFIG_SCHEMA, indent=2) + "\n")
        return EXIT_OK
    doc = _resolve_simulation(args)
    configs = _sim_configs(doc)
    threads = doc.get("threads") or os.cpu_count() or 1
    reports = []
    for cfg in configs:
        log.info("cell family=%s N=%d K=%d p=%g sharding=%s B=%d", cfg.family.value, cfg.N, cfg.K,
                 cfg.pilot_fraction, cfg.sharding.value, cfg.replications)
        try:
            if doc["mode"] == "estimation":
                report = run_estimation_experiment(cfg, n_jobs=threads)
            else:
                pairs = doc.get("hypothesis", [[1, 0.0]])
                hyp = Hypothesis(tuple((int(j), float(v)) for j, v in pairs))
                try:
                    hyp.check(cfg.d)
                except ShapeError as exc:
                    raise CliError(f"field hypothesis: {exc}", EXIT_CONFIG) from None
                beta_alt = doc.get("beta_alt")
                if beta_alt is None:
                    beta_alt = default_beta_alt(cfg.family)
                methods = [TestMethod(m) for m in doc.get("methods", [m.value for m in LRT_METHODS])]
                report = run_lrt_experiment(cfg, hyp, beta_alt, methods, doc.get("alpha", 0.05),
                                            n_jobs=threads)
        except ExperimentError as exc:
            raise CliError(f"experiment failed: {exc}", EXIT_EXPERIMENT) from None
        reports.append(report)
    out_dir = Path(doc["out"])
    _write_reports(out_dir, reports)
    sys.stdout.write(_dict_csv([r.wide_row() for r in reports]))
    log.info("reports written to %s", out_dir)
    return EXIT_OK


# ------------------------------------------------------------------ estimate / test


def _names_for(args, d: int) -> List[str]:
    names = [c.strip() for c in args.covariates.split(",")] if args.covariates else []
    if args.add_intercept:
        names = ["(Intercept)", *names]
    if len(names) != d:
        names = [f"x{j}" for j in range(d)]
    return names


def _load_dataset(args) -> CsvDataset:
    family = Family.parse(args.family)
    if args.synthetic_airline:
        data = synthetic_airline(args.synthetic_airline, args.seed)
        cols = list(AIRLINE_COVARIATES) if not args.covariates else [c.strip() for c in args.covariates.split(",")]
        for c in cols:
            if c not in AIRLINE_COLUMNS or c == "Delayed":
                raise UnknownColumnError(f"unknown column {c!r}; surrogate columns are {list(AIRLINE_COLUMNS)}")
        X = data[:, [AIRLINE_COLUMNS.index(c) for c in cols]]
        y = data[:, AIRLINE_COLUMNS.index("Delayed")]
        names = list(cols)
        if not args.no_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["(Intercept)", *names]
        return CsvDataset(y, X, tuple(names), "Delayed", "synthetic-airline")
    if not args.data:
        raise CliError("give --data FILE, --synthetic-airline ROWS or --workers", EXIT_CONFIG)
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    try:
        return load_csv(args.data, args.response, covs, args.add_intercept, family)
    except OSError as exc:
        raise CliError(f"cannot read {args.data}: {exc.strerror or exc}", EXIT_PARSE) from None


def _open_estimation_session(args):
    """Session plus (column names, in-process shards or None, synthetic flag)."""
    family = Family.parse(args.family)
    if args.workers:
        addresses = [a.strip() for a in args.workers.split(",") if a.strip()]
        session = tcp_session(addresses, family, timeout=args.timeout)
        return session, _names_for(args, session.d), None, False
    ds = _load_dataset(args)
    K = args.shards or 1
    plan = make_plan(args.sharding, ds.X, K, args.seed)
    shards = plan.split(ds.shard)
    session = in_process_session(shards, family, threads=args.threads)
    return session, list(ds.columns), shards, ds.path == "synthetic-airline"


def _pilot_n(args, N: int) -> int:
    return int(math.ceil(round(args.pilot_fraction * N, 9)))


def _estimate(args, session, shards):
    family = Family.parse(args.family)
    method = EstimatorKind.parse(args.method)
    tol, max_iter = args.tol, args.max_iter
    if method is EstimatorKind.GLOBAL:
        fit = global_estimate(session, None, tol, max_iter)
        if not fit.converged:
            raise CliError(f"global fit did not converge in {fit.iterations} iterations", EXIT_ESTIMATION)
        return fit
    if method is EstimatorKind.ONE_STEP:
        return run_one_step_protocol(session, family, _pilot_n(args, session.N), args.seed, tol, max_iter)
    if method is EstimatorKind.PILOT:
        rows = session.pilot_rows(_pilot_n(args, session.N), args.seed)
        fit = pilot_estimate(family, rows, tol, max_iter)
        return fit.tagged(EstimatorKind.PILOT, rounds=1)
    if method is EstimatorKind.ONE_SHOT:
        return run_one_shot(session, tol, max_iter)
    if shards is None:
        raise CliError("csl needs the anchor shard on the master; run it without --workers", EXIT_CONFIG)
    return run_csl(session, family, shards[0], tol, max_iter)


def _run_guarded(fn):
    """Map library errors onto exit codes."""
    try:
        return fn()
    except CliError:
        raise
    except UnknownColumnError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except DataParseError as exc:
        raise CliError(str(exc), EXIT_PARSE) from None
    except (PilotTooSmallError, ConfigurationError, ShapeError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except (SingularInformationError, NotPositiveDefiniteError) as exc:
        raise CliError(f"rank deficiency: {exc}", EXIT_SINGULAR) from None
    except AggregationError as exc:
        raise CliError(str(exc), EXIT_UNREACHABLE) from None
    except OneShotUnavailableError as exc:
        raise CliError(str(exc), EXIT_ESTIMATION) from None
    except GlmError as exc:
        raise CliError(f"{type(exc).__name__}: {exc}", EXIT_ESTIMATION) from None


def cmd_estimate(args) -> int:
    def body():
        session, names, shards, synthetic = _open_estimation_session(args)
        with session:
            session.shard_sizes  # metadata round, once
            t = session.transcript
            start = len(t.rounds)
            fit = _estimate(args, session, shards)
            used = t.rounds[start:]
            eval_start = len(t.rounds)
            ll = session.log_lik(fit.beta)
            info = session.aggregate(fit.beta).info
            try:
                cov = chol_solve(info, np.eye(info.shape[0]))
            except NotPositiveDefiniteError as exc:
                raise SingularInformationError(f"information at the estimate: {exc}", iteration=0) from None
            se = np.sqrt(np.diag(cov))
            out = {
                "method": fit.kind.value if fit.kind else args.method,
                "family": Family.parse(args.family).value,
                "N": session.N,
                "K": session.K,
                "columns": names,
                "beta": _floats(fit.beta),
                "coefficients": dict(zip(names, _floats(fit.beta))),
                "std_errors": dict(zip(names, _floats(se))),
                "log_lik": ll,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "rounds": sum(1 for r in used if not r.is_metadata),
                "metadata_rounds": t.metadata_rounds,
                "bytes_sent": sum(sum(r.sent) for r in used),
                "bytes_received": sum(sum(r.received) for r in used),
                "evaluation_rounds": len(t.rounds) - eval_start,
            }
            if method_uses_pilot(args.method):
                out["pilot_fraction"] = args.pilot_fraction
            if synthetic:
                out["data"] = "SYNTHETIC airline surrogate"
        _emit(out, args.out)
        return EXIT_OK

    return _run_guarded(body)


def method_uses_pilot(name: str) -> bool:
    return EstimatorKind.parse(name) in (EstimatorKind.PILOT, EstimatorKind.ONE_STEP)


def _parse_fix(items, names) -> Hypothesis:
    pairs = []
    for item in items:
        for part in item.split(","):
            name, sep, value = part.partition("=")
            name = name.strip()
            if not sep:
                raise CliError(f"--fix: expected name=value, got {part!r}", EXIT_CONFIG)
            if name not in names:
                raise CliError(f"--fix: unknown column {name!r}; model columns are {names}", EXIT_CONFIG)
            try:
                pairs.append((names.index(name), float(value)))
            except ValueError:
                raise CliError(f"--fix: bad value for {name}: {value!r}", EXIT_CONFIG) from None
    try:
        return Hypothesis(tuple(pairs))
    except GlmError as exc:
        raise CliError(f"--fix: {exc}", EXIT_CONFIG) from None


_TEST_METHODS = {
    "global": TestMethod.GLOBAL, "one-step": TestMethod.ONE_STEP,
    "pilot": TestMethod.PILOT, "one-shot": TestMethod.ONE_SHOT,
}


def cmd_test(args) -> int:
    def body():
        if not args.fix:
            raise CliError("give at least one --fix name=value", EXIT_CONFIG)
        family = Family.parse(args.family)
        session, names, _, synthetic = _open_estimation_session(args)
        with session:
            session.shard_sizes
            hyp = _parse_fix(args.fix, names)
            method = _TEST_METHODS[args.method]
            n = _pilot_n(args, session.N)
            if method is TestMethod.GLOBAL:
                res = lrt_global(session, hyp, args.tol, args.max_iter)
            elif method is TestMethod.ONE_STEP:
                res = lrt_subvector_onestep(family, hyp, session, n, args.seed, args.tol, args.max_iter)
            elif method is TestMethod.PILOT:
                res = lrt_pilot(family, session.pilot_rows(n, args.seed), hyp, args.tol, args.max_iter)
            else:
                res = lrt_oneshot(session, hyp, args.tol, args.max_iter)
            out = res.to_dict()
            out["fixed"] = {names[j]: v for j, v in hyp.restricted}
            out["columns"] = names
            out["alpha"] = args.alpha
            out["rejects"] = res.rejects(args.alpha)
            out["rounds"] = session.transcript.heavy_rounds
            if synthetic:
                out["data"] = "SYNTHETIC airline surrogate"
        _emit(out, args.out)
        return EXIT_OK

    return _run_guarded(body)


# ------------------------------------------------------------------ worker


def cmd_worker(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s worker %(message)s", stream=sys.stderr,
                        force=True)
    try:
        covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
        ds = load_csv(args.data, args.response, covs, args.add_intercept, args.family)
    except OSError as exc:
        raise CliError(f"cannot read {args.data}: {exc.strerror or exc}", EXIT_PARSE) from None
    except UnknownColumnError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except DataParseError as exc:
        raise CliError(str(exc), EXIT_PARSE) from None
    host, _, port = args.listen.rpartition(":")
    try:
        server = WorkerServer(Worker(ds.shard, args.family), host or "127.0.0.1", int(port))
    except ValueError:
        raise CliError(f"--listen: bad address {args.listen!r}", EXIT_CONFIG) from None
    except OSError as exc:
        raise CliError(f"cannot listen on {args.listen}: {exc.strerror or exc}", EXIT_BIND) from None

    stop = threading.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: stop.set())
    server.start_background()
    log.info("serving %d rows, d=%d, columns %s on %s:%d", ds.shard.m, ds.shard.d, list(ds.columns),
             server.server_address[0], server.port)
    for h in logging.getLogger().handlers:
        h.flush()
    while not stop.wait(0.5):
        pass
    server.stop()
    log.info("shut down")
    return EXIT_OK


# ------------------------------------------------------------------ generate


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.synthetic_airline:
        write_synthetic_airline(str(out), args.synthetic_airline, args.seed)
        log.info("wrote SYNTHETIC airline surrogate (%d rows) to %s", args.synthetic_airline, out)
        return EXIT_OK
    if not args.preset or not args.rows:
        raise CliError("give --synthetic-airline ROWS, or --preset and --rows", EXIT_CONFIG)
    preset = PRESETS[args.preset]
    y, X = generate(preset["family"], args.rows, preset["beta_true"], preset["covariate_law"], args.seed)
    cols = ["y", *[f"x{j + 1}" for j in range(X.shape[1])]]
    data = np.column_stack([y, X])
    if args.shards:
        plan = make_plan(args.sharding, X, args.shards, args.seed)
        for k in range(args.shards):
            path = out.with_name(f"{out.stem}.shard{k}{out.suffix}")
            write_csv(str(path), cols, data[plan.members(k)])
    else:
        if Strategy.parse(args.sharding) is Strategy.COVARIATE_SUM_ORDERED:
            # sorted file: contiguous blocks of it reproduce covariate-sum sharding
            data = data[np.argsort(X.sum(axis=1), kind="stable")]
        write_csv(str(out), cols, data)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_data_flags(p):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--synthetic-airline", type=int, metavar="ROWS",
                   help="use a SYNTHETIC airline-like surrogate of ROWS rows instead of --data")
    p.add_argument("--no-intercept", action="store_true", help="with --synthetic-airline: omit the intercept")
    p.add_argument("--family", default="logistic", choices=["logistic", "poisson"])
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--add-intercept", action="store_true")
    p.add_argument("--shards", type=int, help="number of in-process workers (default 1)")
    p.add_argument("--sharding", default="contiguous", choices=["contiguous", "random", "nonrandom"],
                   help="how rows are dealt to in-process workers (default: file order)")
    p.add_argument("--workers", help="comma-separated host:port list of running workers")
    p.add_argument("--timeout", type=float, default=30.0, help="per-request TCP timeout in seconds")
    p.add_argument("--pilot-fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--threads", type=int, default=1, help="concurrent in-process workers (default 1)")
    p.add_argument("--out", help="also write the JSON result here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onestep-glm", description=__doc__.split("\n")[0],
                                     epilog="exit codes: " + "; ".join(f"{k} {v}" for k, v in EXIT_CODES.items()))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation cell or grid")
    p.add_argument("--config", help=f"RunConfig JSON file (default: ${CONFIG_ENV} if set)")
    p.add_argument("--print-schema", action="store_true", help="print the RunConfig JSON schema and exit")
    p.add_argument("--mode", choices=["estimation", "testing"])
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--cell", action="append", metavar="N=..,K=..,p=..[,sharding=..]")
    p.add_argument("--grid", action="store_true", help="run every cell of the preset's grid")
    p.add_argument("--sharding", choices=_SHARDINGS)
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(_ESTIMATOR_NAMES)}")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(_METHOD_NAMES)}")
    p.add_argument("--force-csl", action="store_true", help="keep CSL under nonrandom sharding")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--transport", choices=["inprocess", "tcp"])
    p.add_argument("--beta-alt", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--threads", type=int, help="replication processes (default: all cores)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit a GLM to CSV data or running workers")
    _add_data_flags(p)
    p.add_argument("--method", default="one-step", choices=["global", "one-shot", "one-step", "csl", "pilot"])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="likelihood ratio test of fixed coefficients")
    _add_data_flags(p)
    p.add_argument("--method", default="one-step", choices=sorted(_TEST_METHODS))
    p.add_argument("--fix", action="append", metavar="NAME=VALUE")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("worker", help="serve a shard over TCP until SIGTERM")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--data", required=True)
    p.add_argument("--family", required=True, choices=["logistic", "poisson"])
    p.add_argument("--response", default="y")
    p.add_argument("--covariates")
    p.add_argument("--add-intercept", action="store_true")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("generate", help="write a simulated or SYNTHETIC airline-like CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--rows", type=int)
    p.add_argument("--synthetic-airline", type=int, metavar="ROWS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sharding", default="random", choices=["random", "nonrandom", "contiguous"])
    p.add_argument("--shards", type=int, help="write one file per worker instead of one file")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "worker":
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"onestep-glm {args.command}: error: {exc}\n")
        return exc.code
    except (ConfigurationError, ShapeError) as exc:
        sys.stderr.write(f"onestep-glm {args.command}: error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
