"""Likelihood ratio tests and chi-square tail probabilities.

Four test flavours share one result type:

* ``GlobalLRT``: restricted and unrestricted distributed MLEs.
* ``OneStepLRT``: both fits replaced by one-step estimates from the same
  pilot sample.
* ``PilotLRT``: both fits on the pilot rows alone, likelihoods on the pilot.
* ``OneShotLRT``: per-worker likelihood ratios summed, ``K * s`` degrees of
  freedom.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, OneShotUnavailableError, ShapeError
from .estimators import global_estimate, one_step_estimate, pilot_estimate
from .glm import DEFAULT_MAX_ITER, DEFAULT_TOL, DataShard, EstimateResult, Family, log_lik_kernel

_EPS = 1e-16
_MAX_TERMS = 10_000


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_continued_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by modified Lentz."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    dd = 1.0 / b
    h = dd
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        dd = an * dd + b
        if abs(dd) < tiny:
            dd = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        dd = 1.0 / dd
        delta = dd * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_sf(x: float, df: int) -> float:
    """Upper tail ``P(X > x)`` of a chi-square variable with ``df`` degrees of freedom."""
    if df < 1 or int(df) != df:
        raise DomainError("df must be a positive integer")
    x = float(x)
    if math.isnan(x) or x < 0:
        raise DomainError("chi-square statistic must be nonnegative")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    a, g = 0.5 * df, 0.5 * x
    if x < df + 1:
        q = 1.0 - _lower_series(a, g)
    else:
        q = _upper_continued_fraction(a, g)
    return min(1.0, max(0.0, q))


def chi2_isf(alpha: float, df: int, xtol: float = 1e-12) -> float:
    """Critical value ``c`` with ``chi2_sf(c, df) = alpha``, by bisection."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    lo, hi = 0.0, float(df) + 10.0
    while chi2_sf(hi, df) > alpha:
        hi *= 2.0
    while hi - lo > xtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_sf(mid, df) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestMethod(enum.Enum):
    __test__ = False  # keep pytest from collecting this enum

    GLOBAL = "GlobalLRT"
    ONE_STEP = "OneStepLRT"
    PILOT = "PilotLRT"
    ONE_SHOT = "OneShotLRT"


@dataclass(frozen=True, eq=False)
class TestResult:
    """Likelihood ratio statistic with its chi-square p-value.

    ``clamped`` is set when the raw statistic was materially negative (only
    possible for approximate maximizers) and replaced by zero.
    """

    __test__ = False

    statistic: float
    df: int
    p_value: float
    method: TestMethod
    clamped: bool = False
    raw_statistic: float = 0.0
    beta_alt: Optional[np.ndarray] = None
    beta_null: Optional[np.ndarray] = None

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self):
        out = {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "method": self.method.value,
            "clamped": self.clamped,
            "raw_statistic": self.raw_statistic,
        }
        if self.beta_alt is not None:
            out["beta_alt"] = [float(v) for v in self.beta_alt]
        if self.beta_null is not None:
            out["beta_null"] = [float(v) for v in self.beta_null]
        return out


@dataclass(frozen=True)
class Hypothesis:
    """``H0: beta[j] = value`` for each ``(j, value)`` pair in ``restricted``."""

    restricted: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        pairs = tuple((int(j), float(v)) for j, v in self.restricted)
        idx = [j for j, _ in pairs]
        if not pairs:
            raise DomainError("a hypothesis must restrict at least one coefficient")
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise DomainError("restricted indices must be distinct and nonnegative")
        object.__setattr__(self, "restricted", pairs)

    @classmethod
    def full(cls, beta_null) -> "Hypothesis":
        return cls(tuple(enumerate(np.asarray(beta_null, dtype=float))))

    @property
    def s(self) -> int:
        return len(self.restricted)

    @property
    def fixed(self) -> np.ndarray:
        return np.array([j for j, _ in self.restricted], dtype=np.int64)

    def check(self, d: int):
        if int(self.fixed.max()) >= d:
            raise ShapeError(f"hypothesis restricts index {int(self.fixed.max())} but d={d}")

    def free(self, d: int) -> np.ndarray:
        self.check(d)
        mask = np.ones(d, dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)

    def start(self, d: int, base=None) -> np.ndarray:
        """Vector holding the null values at restricted slots and ``base`` (default 0) elsewhere."""
        self.check(d)
        out = np.zeros(d) if base is None else np.array(base, dtype=float)
        for j, v in self.restricted:
            out[j] = v
        return out


def _numerical_zero(raw: float, scale: float) -> bool:
    return abs(raw) <= 1e-9 * (1.0 + abs(scale))


def make_result(ll_alt: float, ll_null: float, df: int, method: TestMethod,
                beta_alt=None, beta_null=None) -> TestResult:
    raw = 2.0 * (ll_alt - ll_null)
    clamped = False
    if _numerical_zero(raw, ll_alt):
        stat = 0.0
    elif raw < 0:
        stat, clamped = 0.0, True
    else:
        stat = raw
    return TestResult(stat, int(df), chi2_sf(stat, df), method, clamped, raw, beta_alt, beta_null)


def lrt_full(family, beta_null, beta_hat, loglik_at_null: float, loglik_at_hat: float,
             method: TestMethod = TestMethod.GLOBAL) -> TestResult:
    """Test of the whole vector ``beta = beta_null`` (``df = d``)."""
    beta_null = np.asarray(beta_null, dtype=float)
    b_hat = beta_hat.beta if isinstance(beta_hat, EstimateResult) else np.asarray(beta_hat, dtype=float)
    if beta_null.shape != b_hat.shape:
        raise ShapeError("beta_null and beta_hat differ in length")
    return make_result(loglik_at_hat, loglik_at_null, b_hat.shape[0], method, b_hat, beta_null)


def lrt_global(session, hypothesis: Hypothesis, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER) -> TestResult:
    d = session.d
    free = hypothesis.free(d)
    alt = global_estimate(session, None, tol, max_iter)
    null = global_estimate(session, hypothesis.start(d), tol, max_iter, free=free)
    return make_result(alt.log_lik, null.log_lik, hypothesis.s, TestMethod.GLOBAL, alt.beta, null.beta)


def _pilot_fits(family, pilot_rows: DataShard, hypothesis: Hypothesis, tol, max_iter):
    d = pilot_rows.d
    free = hypothesis.free(d)
    alt = pilot_estimate(family, pilot_rows, tol, max_iter)
    if free.size:
        null = pilot_estimate(family, pilot_rows, tol, max_iter, init=hypothesis.start(d), free=free)
    else:
        null = EstimateResult(hypothesis.start(d), log_lik_kernel(family, pilot_rows, hypothesis.start(d)))
    return alt, null, free


def lrt_pilot(family, pilot_rows: DataShard, hypothesis: Hypothesis, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> TestResult:
    """Likelihood ratio on the pilot sample only."""
    alt, null, _ = _pilot_fits(Family.parse(family), pilot_rows, hypothesis, tol, max_iter)
    return make_result(alt.log_lik, null.log_lik, hypothesis.s, TestMethod.PILOT, alt.beta, null.beta)


def lrt_onestep_with_pilot(family, hypothesis: Hypothesis, session, pilot_rows: DataShard,
                           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """One-step and pilot tests sharing one pilot sample; returns ``(one_step, pilot)``.

    The restricted pilot fit and restricted one-step update move only the
    free coordinates; the restricted update uses the aggregate bundle at the
    restricted pilot point with restricted rows and columns deleted.
    """
    family = Family.parse(family)
    alt_p, null_p, free = _pilot_fits(family, pilot_rows, hypothesis, tol, max_iter)
    alt_o = one_step_estimate(family, alt_p.beta, session.aggregate(alt_p.beta))
    if free.size:
        null_o = one_step_estimate(family, null_p.beta, session.aggregate(null_p.beta), free=free)
    else:
        null_o = null_p
    ll_alt = session.log_lik(alt_o.beta)
    ll_null = session.log_lik(null_o.beta)
    one_step = make_result(ll_alt, ll_null, hypothesis.s, TestMethod.ONE_STEP, alt_o.beta, null_o.beta)
    pilot = make_result(alt_p.log_lik, null_p.log_lik, hypothesis.s, TestMethod.PILOT, alt_p.beta, null_p.beta)
    return one_step, pilot


def lrt_subvector_onestep(family, hypothesis: Hypothesis, session, n: int, seed: int,
                          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> TestResult:
    """One-step likelihood ratio test of ``beta_s = beta_s0`` with ``df = s``."""
    session.shard_info()
    pilot_rows = session.pilot_rows(n, seed)
    return lrt_onestep_with_pilot(family, hypothesis, session, pilot_rows, tol, max_iter)[0]


def oneshot_statistic(alt_fits: Sequence, null_fits: Sequence, s: int) -> TestResult:
    """Sum of per-worker likelihood ratios; ``df = K * s``."""
    failed = sorted({k for fits in (alt_fits, null_fits) for k, f in enumerate(fits)
                     if not isinstance(f, EstimateResult) or not f.converged})
    if failed:
        raise OneShotUnavailableError(f"local fits failed on workers {failed}", failed_workers=failed)
    ll_alt = math.fsum(f.log_lik for f in alt_fits)
    ll_null = math.fsum(f.log_lik for f in null_fits)
    return make_result(ll_alt, ll_null, len(alt_fits) * s, TestMethod.ONE_SHOT)


def lrt_oneshot(session, hypothesis: Hypothesis, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> TestResult:
    d = session.d
    free = hypothesis.free(d)
    alt = session.local_fits(np.zeros(d), tol, max_iter)
    null = session.local_fits(hypothesis.start(d), tol, max_iter, free=free)
    return oneshot_statistic(alt, null, hypothesis.s)
