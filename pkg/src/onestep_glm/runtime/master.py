"""Master side: broadcast/aggregate rounds with a byte-level transcript."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import AggregationError, ShapeError, WorkerError
from ..estimators import EstimatorKind, one_step_estimate, pilot_estimate
from ..glm import DataShard, DerivativeBundle, EstimateResult, Family
from ..sharding import allocate_pilot, derive_seed
from . import wire
from .transport import InProcessTransport, TcpTransport
from .worker import Worker


@dataclass(frozen=True)
class RoundRecord:
    """One broadcast: request kind plus frame bytes per worker."""

    kind: str
    sent: tuple
    received: tuple

    @property
    def is_metadata(self) -> bool:
        return self.kind == "ShardInfoRequest"


@dataclass
class Transcript:
    rounds: List[RoundRecord] = field(default_factory=list)

    def count(self, kind: Optional[str] = None) -> int:
        return sum(1 for r in self.rounds if kind is None or r.kind == kind)

    @property
    def heavy_rounds(self) -> int:
        """Rounds other than shard-size discovery."""
        return sum(1 for r in self.rounds if not r.is_metadata)

    @property
    def metadata_rounds(self) -> int:
        return sum(1 for r in self.rounds if r.is_metadata)

    @property
    def bytes_sent(self) -> int:
        return sum(sum(r.sent) for r in self.rounds)

    @property
    def bytes_received(self) -> int:
        return sum(sum(r.received) for r in self.rounds)

    def to_dict(self):
        return [{"kind": r.kind, "sent": list(r.sent), "received": list(r.received)} for r in self.rounds]


class MasterSession:
    """Star-topology session over K worker transports.

    Every call is one round: the master sends a request to each worker
    (concurrently when the transports allow it, or when ``threads > 1``)
    and reduces the answers in ascending worker index.  Any worker error
    aborts the round.
    """

    def __init__(self, transports: Sequence, family=None, threads: Optional[int] = None):
        if not transports:
            raise ShapeError("a session needs at least one worker")
        self.transports = list(transports)
        self.family = None if family is None else Family.parse(family)
        self.transcript = Transcript()
        self._sizes: Optional[np.ndarray] = None
        self._d: Optional[int] = None
        if threads is None:
            concurrent = all(getattr(t, "concurrent", False) for t in self.transports)
            threads = len(self.transports) if concurrent else 1
        threads = min(int(threads), len(self.transports))
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    @property
    def K(self) -> int:
        return len(self.transports)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        for t in self.transports:
            t.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ------------------------------------------------------------ plumbing

    def _exchange(self, k: int, frame: bytes):
        try:
            return self.transports[k].exchange(frame)
        except Exception as exc:
            raise AggregationError(f"worker {k} unreachable: {type(exc).__name__}: {exc}", worker=k) from exc

    def broadcast(self, requests, allow_errors: bool = False) -> list:
        """Send one request per worker (or the same one to all) and decode the replies."""
        if isinstance(requests, wire.Message):
            requests = [requests] * self.K
        if len(requests) != self.K:
            raise ShapeError("need exactly one request per worker")
        frames = [wire.encode_frame(r) for r in requests]
        if self._pool is not None:
            replies = list(self._pool.map(self._exchange, range(self.K), frames))
        else:
            replies = [self._exchange(k, f) for k, f in enumerate(frames)]
        kind = type(requests[0]).__name__
        self.transcript.rounds.append(
            RoundRecord(kind, tuple(len(f) for f in frames), tuple(len(r) for r in replies))
        )
        out = []
        for k, (req, raw) in enumerate(zip(requests, replies)):
            try:
                msg = wire.decode_frame(raw)
            except Exception as exc:
                raise AggregationError(f"worker {k} sent an undecodable reply: {exc}", worker=k) from exc
            if isinstance(msg, wire.ErrorResponse):
                if not allow_errors:
                    raise AggregationError(f"worker {k} failed: {msg.message} (code {msg.code})", worker=k)
            elif not isinstance(msg, wire.RESPONSE_FOR[type(req)]):
                raise AggregationError(f"worker {k} answered {type(msg).__name__} to {type(req).__name__}", worker=k)
            out.append(msg)
        return out

    # ------------------------------------------------------------ rounds

    def shard_info(self):
        """Metadata round: shard sizes and the common dimension."""
        replies = self.broadcast(wire.ShardInfoRequest())
        dims = {r.d for r in replies}
        if len(dims) != 1:
            raise AggregationError(f"workers disagree on the dimension: {sorted(dims)}")
        self._sizes = np.array([r.count for r in replies], dtype=np.int64)
        self._d = dims.pop()
        return self._sizes.copy(), self._d

    @property
    def shard_sizes(self) -> np.ndarray:
        if self._sizes is None:
            self.shard_info()
        return self._sizes.copy()

    @property
    def d(self) -> int:
        if self._d is None:
            self.shard_info()
        return self._d

    @property
    def N(self) -> int:
        return int(self.shard_sizes.sum())

    def aggregate(self, beta) -> DerivativeBundle:
        """Sum of the workers' derivative bundles at ``beta``."""
        beta = np.asarray(beta, dtype=float)
        replies = self.broadcast(wire.DerivativesRequest(beta))
        total = replies[0].bundle
        for r in replies[1:]:
            total = total + r.bundle
        return total

    def log_lik(self, beta) -> float:
        replies = self.broadcast(wire.LogLikRequest(np.asarray(beta, dtype=float)))
        return float(sum(r.value for r in replies))

    def pilot_rows(self, n: int, seed: int) -> DataShard:
        """Round 1: each worker ships its share of a stratified SRSWOR sample."""
        nk = allocate_pilot(self.shard_sizes, n)
        requests = [wire.PilotDrawRequest(int(nk[k]), derive_seed(seed, k)) for k in range(self.K)]
        replies = self.broadcast(requests)
        return DataShard(np.concatenate([r.y for r in replies]), np.vstack([r.X for r in replies]))

    def local_fits(self, init, tol, max_iter, free=None) -> list:
        """Every worker's local MLE; failed workers appear as ``WorkerError`` instances."""
        init = np.asarray(init, dtype=float)
        if free is None:
            req = wire.LocalFitRequest(init, tol, max_iter)
        else:
            mask = np.zeros(init.shape[0], dtype=bool)
            mask[np.asarray(free, dtype=np.int64)] = True
            req = wire.RestrictedFitRequest(init, tol, max_iter, mask)
        out = []
        for k, msg in enumerate(self.broadcast(req, allow_errors=True)):
            if isinstance(msg, wire.ErrorResponse):
                out.append(WorkerError(msg.message, code=msg.code, worker=k))
            else:
                out.append(msg.result)
        return out


def in_process_session(shards: Sequence[DataShard], family, threads: int = 1) -> MasterSession:
    family = Family.parse(family)
    return MasterSession([InProcessTransport(Worker(s, family)) for s in shards], family, threads)


def tcp_session(addresses: Sequence[str], family=None, timeout: float = 30.0,
                threads: Optional[int] = None) -> MasterSession:
    transports = []
    try:
        for a in addresses:
            transports.append(TcpTransport.parse(a, timeout))
    except OSError as exc:
        for t in transports:
            t.close()
        raise AggregationError(f"worker {len(transports)} at {addresses[len(transports)]} unreachable: {exc}",
                               worker=len(transports)) from exc
    return MasterSession(transports, family, threads)


def master_aggregate(session: MasterSession, beta) -> DerivativeBundle:
    return session.aggregate(beta)


def run_one_step_protocol(
    session: MasterSession,
    family,
    n: int,
    seed: int,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> EstimateResult:
    """The two-round pipeline: pooled pilot fit, then one Newton step on all rows.

    A cheap metadata round (shard sizes) precedes the two heavy rounds.
    """
    family = Family.parse(family)
    start = len(session.transcript.rounds)
    session.shard_info()
    pilot_rows = session.pilot_rows(n, seed)
    pilot = pilot_estimate(family, pilot_rows, tol, max_iter)
    aggregate = session.aggregate(pilot.beta)
    return one_step_estimate(family, pilot.beta, aggregate).tagged(
        EstimatorKind.ONE_STEP, rounds=sum(1 for r in session.transcript.rounds[start:] if not r.is_metadata)
    )
