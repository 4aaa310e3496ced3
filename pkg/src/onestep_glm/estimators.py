"""Pilot, one-step, one-shot, CSL and global estimators.

The pure estimators take in-memory inputs (pilot rows, an aggregated
derivative bundle, local fits).  The ``run_*`` and ``global_estimate``
helpers drive them against a master session, which only needs ``aggregate``,
``local_fits`` and ``transcript`` (see :mod:`onestep_glm.runtime.master`).
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .errors import (
    NotPositiveDefiniteError,
    OneShotUnavailableError,
    PilotTooSmallError,
    ShapeError,
    SingularInformationError,
)
from .glm import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    DataShard,
    DerivativeBundle,
    EstimateResult,
    Family,
    chol_solve,
    derivatives,
    fit_mle,
    newton_fit,
)

#: pilot fits need at least this many rows per free coefficient
PILOT_ROWS_PER_COEF = 5


class EstimatorKind(enum.Enum):
    GLOBAL = "GO"
    PILOT = "Pilot"
    ONE_STEP = "One-Step"
    ONE_SHOT = "OS"
    CSL = "CSL"

    @classmethod
    def parse(cls, value) -> "EstimatorKind":
        if isinstance(value, EstimatorKind):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "go": cls.GLOBAL, "global": cls.GLOBAL,
            "pilot": cls.PILOT,
            "one-step": cls.ONE_STEP, "onestep": cls.ONE_STEP,
            "os": cls.ONE_SHOT, "one-shot": cls.ONE_SHOT, "oneshot": cls.ONE_SHOT,
            "csl": cls.CSL,
        }
        if key not in aliases:
            raise ValueError(f"unknown estimator {value!r}")
        return aliases[key]


def _free_index(d: int, free) -> np.ndarray:
    return np.arange(d) if free is None else np.asarray(free, dtype=np.int64)


def pilot_estimate(
    family,
    pilot_rows: DataShard,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init=None,
    free=None,
    min_rows_per_coef: int = PILOT_ROWS_PER_COEF,
) -> EstimateResult:
    """MLE on the pooled pilot rows.

    Raises :class:`PilotTooSmallError` below ``min_rows_per_coef`` rows per
    free coefficient (a heuristic guard; pass 1 to disable it).
    """
    n_free = _free_index(pilot_rows.d, free).size
    need = min_rows_per_coef * max(n_free, 1)
    if pilot_rows.m < need:
        raise PilotTooSmallError(f"pilot has {pilot_rows.m} rows; need at least {need} for {n_free} coefficients")
    fit = fit_mle(family, pilot_rows, init, tol, max_iter, free=free)
    return fit.tagged(EstimatorKind.PILOT)


def one_step_estimate(family, pilot_beta, aggregate: DerivativeBundle, free=None) -> EstimateResult:
    """Single undamped Fisher-scoring step from ``pilot_beta`` using full-data derivatives.

    With ``free`` given, the step runs on those coordinates only (the
    aggregate's restricted rows and columns are deleted) and the remaining
    coordinates keep their ``pilot_beta`` values.
    """
    beta = np.array(pilot_beta, dtype=float).reshape(-1)
    if beta.shape[0] != aggregate.d:
        raise ShapeError(f"pilot beta has length {beta.shape[0]}, aggregate has d={aggregate.d}")
    idx = _free_index(beta.shape[0], free)
    if idx.size:
        sub = aggregate.restrict(idx) if free is not None else aggregate
        try:
            step = chol_solve(sub.info, sub.score)
        except NotPositiveDefiniteError as exc:
            raise SingularInformationError(f"aggregate information is singular: {exc}", iteration=1) from None
        beta[idx] += step
        step_norm = float(np.max(np.abs(step)))
    else:
        step_norm = 0.0
    return EstimateResult(beta, None, 1, True, step_norm, kind=EstimatorKind.ONE_STEP)


def one_shot_estimate(local_fits: Sequence, weights: str = "equal", sizes=None) -> EstimateResult:
    """Average of the workers' local MLEs.

    Parameters
    ----------
    local_fits : sequence
        One entry per worker; an exception instance or a non-converged
        :class:`EstimateResult` marks a failed worker.
    weights : {"equal", "by_size"}
        ``"equal"`` is the plain average.  ``"by_size"`` weights by ``sizes``.
    """
    failed = [k for k, f in enumerate(local_fits) if not isinstance(f, EstimateResult) or not f.converged]
    if failed:
        raise OneShotUnavailableError(f"local fits failed on workers {failed}", failed_workers=failed)
    betas = np.vstack([f.beta for f in local_fits])
    if weights == "equal":
        w = np.full(len(local_fits), 1.0 / len(local_fits))
    elif weights == "by_size":
        if sizes is None or len(sizes) != len(local_fits):
            raise ShapeError("by_size weighting needs one size per worker")
        w = np.asarray(sizes, dtype=float) / float(np.sum(sizes))
    else:
        raise ValueError(f"unknown weighting {weights!r}")
    beta = w @ betas
    iters = max(f.iterations for f in local_fits)
    return EstimateResult(beta, None, iters, True, max(f.final_step_norm for f in local_fits),
                          kind=EstimatorKind.ONE_SHOT)


def csl_estimate(
    family,
    anchor_shard: DataShard,
    anchor_beta,
    global_grad_per_row,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EstimateResult:
    """Surrogate-likelihood estimator anchored on one worker.

    Maximizes ``l1(b)/N1 - <g1(a)/N1 - gN(a)/N, b>`` where ``a`` is the
    anchor's local MLE, ``g1`` its score and ``gN(a)/N`` the full-data
    score per row.
    """
    family = Family.parse(family)
    anchor_beta = np.asarray(anchor_beta, dtype=float)
    n1 = float(anchor_shard.m)
    local_at_anchor = derivatives(family, anchor_shard, anchor_beta)
    shift = local_at_anchor.score / n1 - np.asarray(global_grad_per_row, dtype=float)

    def surrogate(beta):
        b = derivatives(family, anchor_shard, beta)
        return DerivativeBundle(b.score / n1 - shift, b.info / n1, b.log_lik / n1 - float(shift @ beta), b.count)

    fit = newton_fit(surrogate, anchor_beta, tol, max_iter)
    return fit.tagged(EstimatorKind.CSL, log_lik=None)


def global_estimate(session, init=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    free=None) -> EstimateResult:
    """Distributed Fisher scoring: one aggregate round per evaluation.

    Numerically the same iteration as :func:`~onestep_glm.glm.fit_mle` on
    the pooled rows.
    """
    start = len(session.transcript.rounds)
    d = session.d
    init = np.zeros(d) if init is None else np.asarray(init, dtype=float)
    fit = newton_fit(session.aggregate, init, tol, max_iter, free=free)
    rounds = sum(1 for r in session.transcript.rounds[start:] if not r.is_metadata)
    return fit.tagged(EstimatorKind.GLOBAL, rounds=rounds)


def run_one_shot(session, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 weights: str = "equal") -> EstimateResult:
    fits = session.local_fits(np.zeros(session.d), tol, max_iter)
    return one_shot_estimate(fits, weights, session.shard_sizes).tagged(EstimatorKind.ONE_SHOT, rounds=1)


def run_csl(session, family, anchor_shard: DataShard, tol: float = DEFAULT_TOL,
            max_iter: int = DEFAULT_MAX_ITER) -> EstimateResult:
    """CSL with worker 0 as anchor: local fit, one aggregate round, surrogate fit."""
    anchor = fit_mle(family, anchor_shard, None, tol, max_iter)
    if not anchor.converged:
        raise SingularInformationError("anchor worker's local fit did not converge", iteration=anchor.iterations)
    total = session.aggregate(anchor.beta)
    return csl_estimate(family, anchor_shard, anchor.beta, total.score / total.count, tol, max_iter).tagged(
        EstimatorKind.CSL, log_lik=None, rounds=1
    )
