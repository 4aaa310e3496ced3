"""Partitioning rows across workers and drawing the stratified pilot sample.

Randomness comes from numpy's Philox4x64 generator, a counter-based
bit generator with a published algorithm, keyed through ``SeedSequence`` so
the same seed reproduces the same stream on any machine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AllocationError, ConfigurationError, ShapeError


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional stream path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic child u64 seed, e.g. one per worker."""
    ss = np.random.SeedSequence([int(seed), *map(int, stream)])
    return int(ss.generate_state(1, np.uint64)[0])


class Strategy(enum.Enum):
    RANDOM = "random"
    COVARIATE_SUM_ORDERED = "nonrandom"
    CONTIGUOUS = "contiguous"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        value = str(value).lower()
        aliases = {"random": cls.RANDOM, "nonrandom": cls.COVARIATE_SUM_ORDERED,
                   "covariate_sum": cls.COVARIATE_SUM_ORDERED,
                   "covariatesumordered": cls.COVARIATE_SUM_ORDERED,
                   "contiguous": cls.CONTIGUOUS, "file-order": cls.CONTIGUOUS}
        if value not in aliases:
            raise ConfigurationError(f"unknown sharding strategy {value!r}")
        return aliases[value]


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Worker index for every global row."""

    assignments: np.ndarray
    K: int
    strategy: Strategy

    @property
    def N(self) -> int:
        return self.assignments.shape[0]

    def members(self, k: int) -> np.ndarray:
        """Global row indices held by worker ``k``, ascending."""
        return np.flatnonzero(self.assignments == k)

    def shard_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)

    def split(self, shard):
        """Cut a pooled :class:`~onestep_glm.glm.DataShard` into K shards."""
        if shard.m != self.N:
            raise ShapeError(f"plan covers {self.N} rows but the data has {shard.m}")
        return [shard.take(self.members(k)) for k in range(self.K)]


def _check_nk(N: int, K: int):
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    if K > N:
        raise ConfigurationError(f"cannot spread {N} rows over {K} workers")


def shard_random(N: int, K: int, seed: int) -> PartitionPlan:
    """Random permutation cut into K contiguous blocks whose sizes differ by at most one."""
    _check_nk(N, K)
    perm = make_rng(seed).permutation(N)
    assignments = np.empty(N, dtype=np.int64)
    for k, block in enumerate(np.array_split(perm, K)):
        assignments[block] = k
    return PartitionPlan(assignments, K, Strategy.RANDOM)


def shard_contiguous(N: int, K: int) -> PartitionPlan:
    """Rows kept in their given order and cut into K blocks whose sizes differ by at most one."""
    _check_nk(N, K)
    assignments = np.empty(N, dtype=np.int64)
    for k, block in enumerate(np.array_split(np.arange(N), K)):
        assignments[block] = k
    return PartitionPlan(assignments, K, Strategy.CONTIGUOUS)


def shard_by_covariate_sum(X, K: int) -> PartitionPlan:
    """Order rows by the sum of their covariates and deal out equal contiguous blocks.

    The row with 1-based rank ``i`` in ascending covariate sum (ties kept in
    original order) goes to worker ``floor((i-1) K / N)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError("X must be two-dimensional")
    N = X.shape[0]
    _check_nk(N, K)
    z = X.sum(axis=1)
    order = np.argsort(z, kind="stable")
    ranks0 = np.arange(N, dtype=np.int64)
    assignments = np.empty(N, dtype=np.int64)
    assignments[order] = (ranks0 * K) // N
    return PartitionPlan(assignments, K, Strategy.COVARIATE_SUM_ORDERED)


def make_plan(strategy, X, K: int, seed: int) -> PartitionPlan:
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.RANDOM:
        return shard_random(np.asarray(X).shape[0], K, seed)
    if strategy is Strategy.CONTIGUOUS:
        return shard_contiguous(np.asarray(X).shape[0], K)
    return shard_by_covariate_sum(X, K)


def allocate_pilot(shard_sizes: Sequence[int], n: int) -> np.ndarray:
    """Proportional allocation of ``n`` pilot rows by largest remainder.

    Ties in the fractional remainder go to the lower worker index.
    """
    sizes = np.asarray(shard_sizes, dtype=np.int64)
    N = int(sizes.sum())
    if not 1 <= n <= N:
        raise ConfigurationError(f"pilot size n={n} must lie in [1, {N}]")
    numer = n * sizes
    nk = numer // N
    rem = numer % N
    short = n - int(nk.sum())
    # stable sort on -rem keeps lower worker indices first among ties
    for k in np.argsort(-rem, kind="stable")[:short]:
        nk[k] += 1
    for k, (a, s) in enumerate(zip(nk, sizes)):
        if a > s:
            raise AllocationError(f"worker {k} is asked for {a} pilot rows but holds {s}", worker=k)
    return nk


def srswor(m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Simple random sample of ``k`` of ``m`` positions by partial Fisher-Yates.

    Returned positions are sorted ascending.
    """
    if not 0 <= k <= m:
        raise ConfigurationError(f"cannot sample {k} of {m} rows")
    pool = np.arange(m, dtype=np.int64)
    u = rng.random(k)
    for i in range(k):
        j = i + int(u[i] * (m - i))
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:k])


@dataclass(frozen=True)
class PilotSample:
    per_worker_ids: tuple
    n: int
    seed: int


def draw_pilot(plan: PartitionPlan, shard_sizes, n: int, seed: int) -> PilotSample:
    """Draw the pilot sample exactly as the workers would.

    Worker ``k`` samples with the child seed ``derive_seed(seed, k)``; the
    master sends that seed in its pilot request, so this function and the
    distributed protocol select identical rows.
    """
    sizes = np.asarray(shard_sizes, dtype=np.int64)
    if sizes.shape[0] != plan.K:
        raise ShapeError("need one shard size per worker")
    nk = allocate_pilot(sizes, n)
    ids = []
    for k in range(plan.K):
        members = plan.members(k)
        pos = srswor(int(sizes[k]), int(nk[k]), make_rng(derive_seed(seed, k)))
        ids.append(members[pos])
    return PilotSample(tuple(ids), int(n), int(seed))
