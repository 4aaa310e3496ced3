"""Data generators, replication runners and error/rejection metrics.

Replication ``b`` (1-based) uses ``base_seed + b`` as its root seed; data,
sharding and pilot draws take independent child streams of that root, so
adding estimators to a config never changes the data the others see.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats
from scipy.special import expit

from .errors import ConfigurationError, ExperimentError, GlmError, ShapeError
from .estimators import (
    EstimatorKind,
    global_estimate,
    one_step_estimate,
    pilot_estimate,
    run_csl,
    run_one_shot,
)
from .glm import DEFAULT_MAX_ITER, DEFAULT_TOL, DataShard, Family
from .inference import (
    Hypothesis,
    TestMethod,
    chi2_isf,
    lrt_global,
    lrt_oneshot,
    lrt_onestep_with_pilot,
)
from .runtime import Worker, WorkerServer, in_process_session, tcp_session
from .sharding import Strategy, derive_seed, make_plan, make_rng

log = logging.getLogger(__name__)

#: maximum share of failed replications per estimator before a run is rejected
MAX_FAILURE_RATE = 0.05

# child stream ids under a replication seed
_DATA, _SHARD, _PILOT = 0, 1, 2


class CovariateLaw(enum.Enum):
    STD_NORMAL = "std_normal"
    UNIFORM01 = "uniform01"
    INTERCEPT_PLUS_UNIFORM01 = "intercept_uniform01"

    @classmethod
    def parse(cls, value) -> "CovariateLaw":
        if isinstance(value, CovariateLaw):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"stdnormal": cls.STD_NORMAL, "std_normal": cls.STD_NORMAL, "normal": cls.STD_NORMAL,
                   "uniform01": cls.UNIFORM01, "uniform": cls.UNIFORM01,
                   "interceptplusuniform01": cls.INTERCEPT_PLUS_UNIFORM01,
                   "intercept_uniform01": cls.INTERCEPT_PLUS_UNIFORM01}
        if key not in aliases:
            raise ConfigurationError(f"unknown covariate law {value!r}")
        return aliases[key]


def gen_covariates(N: int, d: int, law, rng: np.random.Generator) -> np.ndarray:
    law = CovariateLaw.parse(law)
    if law is CovariateLaw.STD_NORMAL:
        return rng.standard_normal((N, d))
    if law is CovariateLaw.UNIFORM01:
        return rng.random((N, d))
    if d != 2:
        raise ShapeError("the intercept-plus-uniform law has exactly two coefficients")
    return np.column_stack([np.ones(N), rng.random(N)])


def gen_logistic(N: int, beta, covariate_law=CovariateLaw.STD_NORMAL, seed: int = 0):
    """Bernoulli responses with ``P(Y=1) = expit(x'beta)``; returns ``(y, X)``."""
    beta = np.asarray(beta, dtype=float)
    rng = make_rng(seed)
    X = gen_covariates(N, beta.shape[0], covariate_law, rng)
    y = (rng.random(N) < expit(X @ beta)).astype(float)
    return y, X


def gen_poisson(N: int, beta, covariate_law=CovariateLaw.UNIFORM01, seed: int = 0):
    """Poisson responses with mean ``exp(x'beta)``; returns ``(y, X)``.

    Counts come from numpy's Poisson sampler: a multiplication (inversion
    style) method below mean 10 and Hormann's PTRS transformed rejection
    above it.
    """
    beta = np.asarray(beta, dtype=float)
    rng = make_rng(seed)
    X = gen_covariates(N, beta.shape[0], covariate_law, rng)
    y = rng.poisson(np.exp(X @ beta)).astype(float)
    return y, X


def generate(family, N: int, beta, covariate_law, seed: int):
    family = Family.parse(family)
    gen = gen_logistic if family is Family.LOGISTIC else gen_poisson
    return gen(N, beta, covariate_law, seed)


def rmse(estimates, beta_true) -> np.ndarray:
    """Per-coordinate root mean squared error over replications."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    beta_true = np.asarray(beta_true, dtype=float)
    if est.shape[0] < 1 or est.shape[1] != beta_true.shape[0]:
        raise ShapeError(f"estimates of shape {est.shape} do not match beta of length {beta_true.shape[0]}")
    return np.sqrt(np.mean((est - beta_true) ** 2, axis=0))


def armse(rmse_vector) -> float:
    return float(np.mean(np.asarray(rmse_vector, dtype=float)))


def erp(indicators) -> float:
    """Empirical rejection probability: the share of true indicators."""
    ind = np.asarray(indicators, dtype=bool)
    if ind.size < 1:
        raise ShapeError("need at least one replication")
    return float(ind.mean())


@dataclass
class SimConfig:
    family: Family
    beta_true: Tuple[float, ...]
    N: int
    K: int
    pilot_fraction: float
    sharding: Strategy = Strategy.RANDOM
    estimators: Tuple[EstimatorKind, ...] = tuple(EstimatorKind)
    replications: int = 500
    base_seed: int = 0
    covariate_law: CovariateLaw = CovariateLaw.STD_NORMAL
    force_csl: bool = False
    transport: str = "inprocess"
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.beta_true = tuple(float(b) for b in self.beta_true)
        self.sharding = Strategy.parse(self.sharding)
        self.covariate_law = CovariateLaw.parse(self.covariate_law)
        self.estimators = tuple(EstimatorKind.parse(e) for e in self.estimators)
        if not 0.0 < self.pilot_fraction <= 1.0:
            raise ConfigurationError(f"pilot_fraction must lie in (0, 1], got {self.pilot_fraction}")
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if self.K < 1 or self.K > self.N:
            raise ConfigurationError(f"K={self.K} must lie in [1, N={self.N}]")
        if self.pilot_n < self.d:
            raise ConfigurationError(f"pilot size {self.pilot_n} is below the dimension {self.d}")
        if self.transport not in ("inprocess", "tcp"):
            raise ConfigurationError(f"unknown transport {self.transport!r}")

    @property
    def d(self) -> int:
        return len(self.beta_true)

    @property
    def pilot_n(self) -> int:
        # round before ceil so 0.1 * 10_000 stays 1000
        return int(math.ceil(round(self.pilot_fraction * self.N, 9)))

    def active_estimators(self) -> Tuple[EstimatorKind, ...]:
        if self.sharding is Strategy.COVARIATE_SUM_ORDERED and not self.force_csl:
            return tuple(e for e in self.estimators if e is not EstimatorKind.CSL)
        return self.estimators

    def to_dict(self):
        return {
            "family": self.family.value,
            "beta_true": list(self.beta_true),
            "N": self.N,
            "K": self.K,
            "pilot_fraction": self.pilot_fraction,
            "sharding": self.sharding.value,
            "estimators": [e.value for e in self.estimators],
            "replications": self.replications,
            "base_seed": self.base_seed,
            "covariate_law": self.covariate_law.value,
            "force_csl": self.force_csl,
            "transport": self.transport,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }


@dataclass
class SimReport:
    """Outcome of one experiment cell.

    ``records`` maps a label (estimator or test method, with ``null``/``alt``
    prefixes in testing mode) to one entry per replication: a list of floats
    or ``None`` for a failed replication.
    """

    mode: str
    config: dict
    seeds: List[int]
    records: Dict[str, list]
    errors: Dict[str, list]
    summary: Dict[str, dict]
    wall_clock: float = 0.0

    def failures(self, label: str) -> int:
        return sum(1 for r in self.records[label] if r is None)

    def raw_json(self) -> str:
        """Deterministic JSON of the config, seeds and raw records (no timing)."""
        return json.dumps(
            {"mode": self.mode, "config": self.config, "seeds": self.seeds,
             "records": self.records, "errors": self.errors, "summary": self.summary},
            indent=1, sort_keys=True,
        )

    def csv_rows(self) -> List[dict]:
        c = self.config
        base = {"family": c["family"], "sharding": c["sharding"], "N": c["N"], "K": c["K"],
                "pilot_fraction": c["pilot_fraction"], "B": c["replications"]}
        return [{**base, "label": label, **stats_} for label, stats_ in self.summary.items()]

    def to_csv(self) -> str:
        rows = self.csv_rows()
        keys = list(rows[0].keys()) if rows else []
        for r in rows:
            keys.extend(k for k in r if k not in keys)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})
        return buf.getvalue()

    def wide_row(self) -> dict:
        """One row per cell: the headline metric for every label."""
        c = self.config
        row = {"family": c["family"], "sharding": c["sharding"], "N": c["N"], "K": c["K"],
               "pilot_fraction": c["pilot_fraction"]}
        for label, stats_ in self.summary.items():
            if self.mode == "estimation":
                row[label] = stats_["armse"]
            else:
                row[f"{label} size"] = stats_["size"]
                row[f"{label} power"] = stats_["power"]
        return row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


@contextmanager
def open_session(shards: Sequence[DataShard], family, transport: str = "inprocess"):
    """Session over in-process workers, or over TCP to locally spawned worker servers."""
    if transport == "inprocess":
        session = in_process_session(shards, family)
        try:
            yield session
        finally:
            session.close()
        return
    servers = [WorkerServer(Worker(s, family)) for s in shards]
    for srv in servers:
        srv.start_background()
    session = tcp_session([f"127.0.0.1:{srv.port}" for srv in servers], family)
    try:
        yield session
    finally:
        session.close()
        for srv in servers:
            srv.stop()


def replicate_data(cfg: SimConfig, seed_b: int, beta=None):
    """Pooled rows and their shards for one replication."""
    beta = cfg.beta_true if beta is None else beta
    y, X = generate(cfg.family, cfg.N, beta, cfg.covariate_law, derive_seed(seed_b, _DATA))
    pooled = DataShard(y, X)
    plan = make_plan(cfg.sharding, X, cfg.K, derive_seed(seed_b, _SHARD))
    return pooled, plan.split(pooled)


def _estimate_once(cfg: SimConfig, seed_b: int, kinds) -> Tuple[dict, dict]:
    _, shards = replicate_data(cfg, seed_b)
    out, errs = {}, {}

    def attempt(kind, fn):
        try:
            res = fn()
            if not res.converged:
                raise GlmError(f"{kind.value} did not converge")
            out[kind] = [float(v) for v in res.beta]
        except GlmError as exc:
            out[kind] = None
            errs[kind] = f"{type(exc).__name__}: {exc}"

    with open_session(shards, cfg.family, cfg.transport) as session:
        session.shard_info()
        if EstimatorKind.GLOBAL in kinds:
            attempt(EstimatorKind.GLOBAL, lambda: global_estimate(session, None, cfg.tol, cfg.max_iter))
        if EstimatorKind.ONE_SHOT in kinds:
            attempt(EstimatorKind.ONE_SHOT, lambda: run_one_shot(session, cfg.tol, cfg.max_iter))
        if EstimatorKind.CSL in kinds:
            attempt(EstimatorKind.CSL, lambda: run_csl(session, cfg.family, shards[0], cfg.tol, cfg.max_iter))
        if EstimatorKind.PILOT in kinds or EstimatorKind.ONE_STEP in kinds:
            state = {}

            def pilot():
                rows = session.pilot_rows(cfg.pilot_n, derive_seed(seed_b, _PILOT))
                state["pilot"] = pilot_estimate(cfg.family, rows, cfg.tol, cfg.max_iter)
                return state["pilot"]

            def one_step():
                if "pilot" not in state:
                    pilot()
                p = state["pilot"]
                if not p.converged:
                    raise GlmError("pilot fit did not converge")
                return one_step_estimate(cfg.family, p.beta, session.aggregate(p.beta))

            if EstimatorKind.PILOT in kinds:
                attempt(EstimatorKind.PILOT, pilot)
            if EstimatorKind.ONE_STEP in kinds:
                attempt(EstimatorKind.ONE_STEP, one_step)
    return out, errs


def _check_failures(records: Dict[str, list], B: int):
    for label, recs in records.items():
        failed = sum(1 for r in recs if r is None)
        if failed > MAX_FAILURE_RATE * B:
            raise ExperimentError(f"{label}: {failed} of {B} replications failed")


def _map(fn, args_list, n_jobs: int):
    """Ordered map, optionally over worker processes; results keyed by position."""
    if n_jobs <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futures]


def run_estimation_experiment(cfg: SimConfig, check_failures: bool = True, n_jobs: int = 1) -> SimReport:
    """ARMSE of each requested estimator over ``cfg.replications`` datasets."""
    t0 = time.perf_counter()
    kinds = cfg.active_estimators()
    seeds = [cfg.base_seed + b for b in range(1, cfg.replications + 1)]
    records = {k.value: [] for k in kinds}
    errors = {k.value: [] for k in kinds}
    results = _map(_estimate_once, [(cfg, seed_b, kinds) for seed_b in seeds], n_jobs)
    for b, (out, errs) in enumerate(results, start=1):
        for k in kinds:
            records[k.value].append(out[k])
            if k in errs:
                errors[k.value].append([b, errs[k]])
    summary = {}
    for label, recs in records.items():
        ok = [r for r in recs if r is not None]
        entry = {"failures": len(recs) - len(ok)}
        if ok:
            r = rmse(ok, cfg.beta_true)
            entry["armse"] = armse(r)
            for j, v in enumerate(r, start=1):
                entry[f"rmse_{j}"] = float(v)
        else:
            entry["armse"] = float("nan")
        summary[label] = entry
    report = SimReport("estimation", cfg.to_dict(), seeds, records, errors, summary,
                       time.perf_counter() - t0)
    if check_failures:
        _check_failures(records, cfg.replications)
    return report


# ------------------------------------------------------------------ testing

LRT_METHODS = (TestMethod.GLOBAL, TestMethod.ONE_SHOT, TestMethod.PILOT, TestMethod.ONE_STEP)


def _test_once(cfg: SimConfig, seed_b: int, beta, hypothesis: Hypothesis, methods) -> Tuple[dict, dict]:
    _, shards = replicate_data(cfg, seed_b, beta)
    out, errs = {}, {}

    def attempt(labels, fn):
        try:
            results = fn()
            for m, r in zip(labels, results):
                out[m] = [r.statistic, r.df]
        except GlmError as exc:
            for m in labels:
                out[m] = None
                errs[m] = f"{type(exc).__name__}: {exc}"

    with open_session(shards, cfg.family, cfg.transport) as session:
        session.shard_info()
        if TestMethod.GLOBAL in methods:
            attempt([TestMethod.GLOBAL], lambda: [lrt_global(session, hypothesis, cfg.tol, cfg.max_iter)])
        if TestMethod.ONE_SHOT in methods:
            attempt([TestMethod.ONE_SHOT], lambda: [lrt_oneshot(session, hypothesis, cfg.tol, cfg.max_iter)])
        pair = [m for m in (TestMethod.ONE_STEP, TestMethod.PILOT) if m in methods]
        if pair:
            def both():
                rows = session.pilot_rows(cfg.pilot_n, derive_seed(seed_b, _PILOT))
                one, pil = lrt_onestep_with_pilot(cfg.family, hypothesis, session, rows, cfg.tol, cfg.max_iter)
                return [one if m is TestMethod.ONE_STEP else pil for m in pair]

            attempt(pair, both)
    return out, errs


def run_lrt_experiment(cfg: SimConfig, hypothesis: Hypothesis, beta_alt: float,
                       methods: Sequence[TestMethod] = LRT_METHODS, alpha: float = 0.05,
                       alt_index: Optional[int] = None, check_failures: bool = True,
                       n_jobs: int = 1) -> SimReport:
    """Empirical size (data from ``cfg.beta_true``) and power (restricted slot set to ``beta_alt``).

    The alternative pass sets the single restricted coefficient (or
    ``alt_index``) to ``beta_alt`` and keeps the others.
    """
    t0 = time.perf_counter()
    methods = tuple(methods)
    j = int(hypothesis.fixed[0]) if alt_index is None else alt_index
    beta_null = np.array(cfg.beta_true, dtype=float)
    beta_h1 = beta_null.copy()
    beta_h1[j] = beta_alt
    seeds = [cfg.base_seed + b for b in range(1, cfg.replications + 1)]
    records, errors = {}, {}
    for phase, beta in (("null", beta_null), ("alt", beta_h1)):
        for m in methods:
            records[f"{phase}:{m.value}"] = []
            errors[f"{phase}:{m.value}"] = []
        # the power pass draws fresh data from its own stream
        jobs = [(cfg, seed_b if phase == "null" else derive_seed(seed_b, 7), beta, hypothesis, methods)
                for seed_b in seeds]
        for b, (out, errs) in enumerate(_map(_test_once, jobs, n_jobs), start=1):
            for m in methods:
                records[f"{phase}:{m.value}"].append(out[m])
                if m in errs:
                    errors[f"{phase}:{m.value}"].append([b, errs[m]])
    summary = {}
    crit_cache = {}
    for m in methods:
        entry = {}
        for phase, key in (("null", "size"), ("alt", "power")):
            recs = [r for r in records[f"{phase}:{m.value}"] if r is not None]
            entry[f"{key}_failures"] = len(records[f"{phase}:{m.value}"]) - len(recs)
            if recs:
                ind = []
                for stat, df in recs:
                    df = int(df)
                    if df not in crit_cache:
                        crit_cache[df] = chi2_isf(alpha, df)
                    ind.append(stat > crit_cache[df])
                entry[key] = erp(ind)
                entry["df"] = int(recs[0][1])
            else:
                entry[key] = float("nan")
        summary[m.value] = entry
    config = {**cfg.to_dict(), "hypothesis": [list(p) for p in hypothesis.restricted],
              "beta_alt": float(beta_alt), "alpha": alpha}
    report = SimReport("testing", config, seeds, records, errors, summary, time.perf_counter() - t0)
    if check_failures:
        _check_failures(records, cfg.replications)
    return report


def calibrate_beta_alt(family, intercept: float, N: int, target_power: float, alpha: float = 0.05) -> float:
    """Alternative slope giving ``target_power`` to the global LRT, asymptotically.

    Uses the intercept-plus-uniform design: the efficient information for
    the slope at the null is ``N * V(mu) / 12`` and the statistic is
    noncentral chi-square with one degree of freedom.
    """
    family = Family.parse(family)
    mu = expit(intercept) if family is Family.LOGISTIC else math.exp(intercept)
    v = mu * (1 - mu) if family is Family.LOGISTIC else mu
    crit = stats.chi2.isf(alpha, 1)

    def gap(b):
        return stats.ncx2.sf(crit, 1, N * v / 12.0 * b * b) - target_power

    return float(optimize.brentq(gap, 1e-8, 10.0, xtol=1e-12))


# ------------------------------------------------------------------ presets

#: GO power at N=50,000 under nonrandom sharding, used to calibrate beta_alt
POWER_TARGETS = {Family.LOGISTIC: 0.966, Family.POISSON: 0.982}
CALIBRATION_N = 50_000

PRESETS = {
    "table1": dict(mode="estimation", family=Family.LOGISTIC, beta_true=(1.0, 2.0, 1.0),
                   covariate_law=CovariateLaw.STD_NORMAL),
    "table2": dict(mode="estimation", family=Family.POISSON, beta_true=(1.0, -1.0, -0.5),
                   covariate_law=CovariateLaw.UNIFORM01),
    "table3": dict(mode="testing", family=Family.LOGISTIC, beta_true=(0.2, 0.0),
                   covariate_law=CovariateLaw.INTERCEPT_PLUS_UNIFORM01),
    "table4": dict(mode="testing", family=Family.POISSON, beta_true=(0.5, 0.0),
                   covariate_law=CovariateLaw.INTERCEPT_PLUS_UNIFORM01),
}

#: (N, K, p) grids of the published tables
PRESET_GRIDS = {
    "table1": [(N, K, p) for N in (10_000, 20_000, 100_000) for K in (2, 5, 10) for p in (0.05, 0.10, 0.20)],
    "table3": [(N, 5, p) for N in (10_000, 20_000, 50_000) for p in (0.05, 0.10, 0.20)],
}
PRESET_GRIDS["table2"] = PRESET_GRIDS["table1"]
PRESET_GRIDS["table4"] = PRESET_GRIDS["table3"]


def default_beta_alt(family) -> float:
    family = Family.parse(family)
    intercept = 0.2 if family is Family.LOGISTIC else 0.5
    return calibrate_beta_alt(family, intercept, CALIBRATION_N, POWER_TARGETS[family])


def preset_config(name: str, N: int, K: int, p: float, sharding="random", replications: int = 500,
                  base_seed: int = 0, **overrides) -> Tuple[SimConfig, dict]:
    """Config for one cell of a published table; returns ``(config, preset)``."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    fields = {k: v for k, v in preset.items() if k != "mode"}
    fields.update(overrides)
    cfg = SimConfig(N=N, K=K, pilot_fraction=p, sharding=sharding, replications=replications,
                    base_seed=base_seed, **fields)
    return cfg, preset
