"""Canonical-link GLM families, derivative bundles and a Fisher-scoring solver.

Only the logistic (Bernoulli, logit link) and Poisson (log link) families
are supported and the dispersion is fixed at one.  Under a canonical link
the score is ``X^T (y - mu)`` and the expected information is
``X^T diag(V(mu)) X``; the observed and expected information coincide.

Log-likelihoods are *kernels*: the additive constant that depends on the
response alone (``-log y!`` for Poisson) is dropped everywhere.  It cancels
in every likelihood ratio, so reported log-likelihoods are only comparable
up to that constant.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import expit

from .errors import (
    DomainError,
    NotPositiveDefiniteError,
    ShapeError,
    SingularInformationError,
)

if TYPE_CHECKING:
    from .estimators import EstimatorKind

#: Poisson linear predictors are clamped here before exponentiation.
POISSON_ETA_MAX = 700.0

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_MAX_HALVINGS = 30


class PoissonClampWarning(RuntimeWarning):
    """Raised (as a warning) when Poisson linear predictors were clamped."""


class Family(enum.Enum):
    """Response family with its canonical link."""

    LOGISTIC = "logistic"
    POISSON = "poisson"

    @property
    def dispersion(self) -> float:
        return 1.0

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown family {value!r}; expected 'logistic' or 'poisson'") from None


def _check_finite_eta(eta):
    if not np.all(np.isfinite(eta)):
        raise DomainError("linear predictor must be finite")


def _clamp_poisson(eta):
    eta = np.asarray(eta, dtype=float)
    over = eta > POISSON_ETA_MAX
    if np.any(over):
        warnings.warn(
            f"{int(np.count_nonzero(over))} Poisson linear predictor(s) clamped to {POISSON_ETA_MAX}",
            PoissonClampWarning,
            stacklevel=3,
        )
        eta = np.minimum(eta, POISSON_ETA_MAX)
    return eta


def mean(family: Family, eta):
    """Inverse canonical link ``mu(eta)``; accepts scalars or arrays."""
    family = Family.parse(family)
    eta_arr = np.asarray(eta, dtype=float)
    _check_finite_eta(eta_arr)
    if family is Family.LOGISTIC:
        # expit evaluates the stable branch for either sign of eta
        out = expit(eta_arr)
    else:
        out = np.exp(_clamp_poisson(eta_arr))
    return float(out) if out.ndim == 0 else out


def variance_fn(family: Family, mu):
    """Variance function ``V(mu)``: ``mu(1-mu)`` or ``mu``."""
    family = Family.parse(family)
    mu_arr = np.asarray(mu, dtype=float)
    if family is Family.LOGISTIC:
        if np.any(~(mu_arr >= 0.0) | ~(mu_arr <= 1.0)):
            raise DomainError("logistic mean must lie in [0, 1]")
        out = mu_arr * (1.0 - mu_arr)
    else:
        if np.any(~(mu_arr >= 0.0) | ~np.isfinite(mu_arr)):
            raise DomainError("Poisson mean must be finite and nonnegative")
        out = mu_arr.copy()
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class DataShard:
    """Rows held by one worker.

    Parameters
    ----------
    y : array of shape (m,)
    X : array of shape (m, d)
    row_ids : array of shape (m,), optional
        Global observation indices; defaults to ``0..m-1``.
    """

    y: np.ndarray
    X: np.ndarray
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ShapeError("X must be two-dimensional")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
        if X.shape[1] < 1:
            raise ShapeError("X must have at least one column")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise DomainError("y and X must be finite")
        if self.row_ids is None:
            ids = np.arange(y.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(self.row_ids, dtype=np.int64).reshape(-1)
            if ids.shape[0] != y.shape[0]:
                raise ShapeError("row_ids length must equal the number of rows")
            if np.unique(ids).shape[0] != ids.shape[0]:
                raise ShapeError("row_ids must be distinct")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "row_ids", ids)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, positions) -> "DataShard":
        """Sub-shard made of the rows at the given local positions."""
        positions = np.asarray(positions, dtype=np.int64)
        return DataShard(self.y[positions], self.X[positions], self.row_ids[positions])

    @staticmethod
    def concat(shards: Sequence["DataShard"]) -> "DataShard":
        if not shards:
            raise ShapeError("cannot concatenate zero shards")
        return DataShard(
            np.concatenate([s.y for s in shards]),
            np.vstack([s.X for s in shards]),
            np.concatenate([s.row_ids for s in shards]),
        )


@dataclass(frozen=True, eq=False)
class DerivativeBundle:
    """Score, expected information, log-likelihood kernel and row count."""

    score: np.ndarray
    info: np.ndarray
    log_lik: float
    count: int

    @classmethod
    def zeros(cls, d: int) -> "DerivativeBundle":
        return cls(np.zeros(d), np.zeros((d, d)), 0.0, 0)

    @property
    def d(self) -> int:
        return self.score.shape[0]

    def __add__(self, other: "DerivativeBundle") -> "DerivativeBundle":
        if other.d != self.d:
            raise ShapeError(f"cannot add bundles of dimension {self.d} and {other.d}")
        return DerivativeBundle(
            self.score + other.score,
            self.info + other.info,
            self.log_lik + other.log_lik,
            self.count + other.count,
        )

    def restrict(self, free) -> "DerivativeBundle":
        """Keep only the free coordinates (delete restricted rows/columns)."""
        free = np.asarray(free, dtype=np.int64)
        return DerivativeBundle(
            self.score[free], self.info[np.ix_(free, free)], self.log_lik, self.count
        )

    def same_as(self, other: "DerivativeBundle") -> bool:
        """Bitwise equality of every field."""
        return (
            self.count == other.count
            and np.array_equal(self.score, other.score)
            and np.array_equal(self.info, other.info)
            and (self.log_lik == other.log_lik or (np.isnan(self.log_lik) and np.isnan(other.log_lik)))
        )


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """Coefficients plus convergence diagnostics.

    ``log_lik`` is ``None`` when the producing step did not evaluate the
    likelihood (the one-step update leaves it to a later broadcast).
    """

    beta: np.ndarray
    log_lik: Optional[float] = None
    iterations: int = 0
    converged: bool = True
    final_step_norm: float = 0.0
    kind: Optional["EstimatorKind"] = None
    rounds: int = 0

    def tagged(self, kind, **changes) -> "EstimateResult":
        return replace(self, kind=kind, **changes)

    def same_as(self, other: "EstimateResult") -> bool:
        def _eq(a, b):
            if a is None or b is None:
                return a is b
            return a == b or (np.isnan(a) and np.isnan(b))

        return (
            np.array_equal(self.beta, other.beta)
            and _eq(self.log_lik, other.log_lik)
            and self.iterations == other.iterations
            and self.converged == other.converged
            and _eq(self.final_step_norm, other.final_step_norm)
        )


def _check_beta(shard: DataShard, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != shard.d:
        raise ShapeError(f"beta has length {beta.shape[0]} but the shard has d={shard.d}")
    return beta


def _log_lik_terms(family: Family, y, eta):
    if family is Family.LOGISTIC:
        # log(1 + e^eta) without overflow
        return y * eta - np.logaddexp(0.0, eta)
    eta = _clamp_poisson(eta)
    return y * eta - np.exp(eta)


def log_lik_kernel(family: Family, shard: DataShard, beta) -> float:
    """Log-likelihood kernel ``sum(y*eta - b(eta))`` with constants dropped."""
    family = Family.parse(family)
    beta = _check_beta(shard, beta)
    if shard.m == 0:
        return 0.0
    eta = shard.X @ beta
    _check_finite_eta(eta)
    return float(np.sum(_log_lik_terms(family, shard.y, eta)))


def derivatives(family: Family, shard: DataShard, beta) -> DerivativeBundle:
    """Score, expected information and log-likelihood at ``beta``."""
    family = Family.parse(family)
    beta = _check_beta(shard, beta)
    d = shard.d
    if shard.m == 0:
        return DerivativeBundle.zeros(d)
    eta = shard.X @ beta
    _check_finite_eta(eta)
    if family is Family.LOGISTIC:
        mu = expit(eta)
        w = mu * (1.0 - mu)
    else:
        mu = np.exp(_clamp_poisson(eta))
        w = mu
    resid = shard.y - mu
    score = shard.X.T @ resid
    info = shard.X.T @ (shard.X * w[:, None])
    info = 0.5 * (info + info.T)
    ll = float(np.sum(_log_lik_terms(family, shard.y, eta)))
    return DerivativeBundle(score, info, ll, shard.m)


def chol_solve(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` via Cholesky."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape[0] != A.shape[0]:
        raise ShapeError("chol_solve needs a square matrix and a matching right-hand side")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NotPositiveDefiniteError("matrix or right-hand side is not finite")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    if not np.all(np.diag(L) > 0.0):
        raise NotPositiveDefiniteError("non-positive pivot")
    z = sla.solve_triangular(L, b, lower=True, check_finite=False)
    return sla.solve_triangular(L.T, z, lower=False, check_finite=False)


Evaluator = Callable[[np.ndarray], DerivativeBundle]


def _not_worse(new: float, old: float) -> bool:
    # relative slack absorbs summation rounding near the optimum
    return np.isfinite(new) and new >= old - 1e-10 * (1.0 + abs(old))


def newton_fit(
    evaluate: Evaluator,
    init,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    free=None,
    max_halvings: int = DEFAULT_MAX_HALVINGS,
) -> EstimateResult:
    """Fisher scoring with step-halving on an arbitrary bundle evaluator.

    ``evaluate(beta)`` must return a :class:`DerivativeBundle` whose
    ``log_lik`` is the objective being maximized.  Coordinates outside
    ``free`` stay at their ``init`` values.  Every accepted trial point's
    bundle is reused for the next iteration, so a fit without halvings costs
    one evaluation per iteration plus one for the start point.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if max_iter < 1:
        raise DomainError("max_iter must be at least 1")
    beta = np.array(init, dtype=float).reshape(-1)
    d = beta.shape[0]
    free_idx = np.arange(d) if free is None else np.asarray(free, dtype=np.int64)
    if free_idx.size == 0:
        b = evaluate(beta)
        return EstimateResult(beta, b.log_lik, 0, True, 0.0)

    current = evaluate(beta)
    if not np.isfinite(current.log_lik):
        raise SingularInformationError("objective is not finite at the start point", iteration=0)
    step_norm = np.inf
    for it in range(1, max_iter + 1):
        sub = current.restrict(free_idx) if free is not None else current
        try:
            step_free = chol_solve(sub.info, sub.score)
        except NotPositiveDefiniteError as exc:
            raise SingularInformationError(
                f"information matrix not positive definite at iteration {it}: {exc}", iteration=it
            ) from None
        step = np.zeros(d)
        step[free_idx] = step_free
        trial = beta + step
        try:
            candidate = evaluate(trial)
        except DomainError:
            candidate = None
        halvings = 0
        while (candidate is None or not _not_worse(candidate.log_lik, current.log_lik)) and halvings < max_halvings:
            step = 0.5 * step
            trial = beta + step
            halvings += 1
            try:
                candidate = evaluate(trial)
            except DomainError:
                candidate = None
        step_norm = float(np.max(np.abs(step)))
        if candidate is None or not _not_worse(candidate.log_lik, current.log_lik):
            # no ascent direction survives halving; stop where we are
            return EstimateResult(beta, current.log_lik, it, step_norm < tol, step_norm)
        beta, current = trial, candidate
        if step_norm < tol:
            return EstimateResult(beta, current.log_lik, it, True, step_norm)
    return EstimateResult(beta, current.log_lik, max_iter, False, step_norm)


def fit_mle(
    family: Family,
    shard: DataShard,
    init=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    free=None,
) -> EstimateResult:
    """Maximum likelihood by Fisher scoring on a single in-memory shard.

    Parameters
    ----------
    family : Family
    shard : DataShard
    init : array of shape (d,), optional
        Starting point, zero by default.  Restricted coordinates (those not
        listed in ``free``) are held at their ``init`` values.
    tol : float
        Convergence threshold on the infinity norm of the accepted step.
    max_iter : int
    free : sequence of int, optional
        Indices of the coordinates to optimize; all of them by default.

    Raises
    ------
    SingularInformationError
        The information matrix lost positive definiteness.  Running out of
        iterations is *not* an error; ``converged`` is ``False`` instead.
    """
    family = Family.parse(family)
    init = np.zeros(shard.d) if init is None else _check_beta(shard, init)
    if shard.m == 0:
        raise SingularInformationError("cannot fit an empty shard", iteration=0)
    return newton_fit(lambda b: derivatives(family, shard, b), init, tol, max_iter, free=free)
