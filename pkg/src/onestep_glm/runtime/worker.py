"""Worker side of the protocol: a shard plus a request handler."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import GlmError, IncompleteFrame, ProtocolError, SingularInformationError
from ..glm import DataShard, Family, derivatives, fit_mle, log_lik_kernel
from ..sharding import make_rng, srswor
from . import wire

log = logging.getLogger(__name__)


class DimensionMismatch(GlmError):
    pass


class Worker:
    """Holds one read-only shard and answers requests about it.

    ``handle`` maps a request frame to a response frame and never raises:
    malformed input and solver failures come back as ``ErrorResponse``.
    """

    def __init__(self, shard: DataShard, family):
        self.shard = shard
        self.family = Family.parse(family)

    @property
    def d(self) -> int:
        return self.shard.d

    def handle(self, frame: bytes) -> bytes:
        try:
            request = wire.decode_frame(frame)
        except (ProtocolError, IncompleteFrame) as exc:
            return wire.encode_frame(wire.ErrorResponse(wire.ERR_MALFORMED, f"malformed frame: {exc}"))
        return wire.encode_frame(self.respond(request))

    def respond(self, request: wire.Message) -> wire.Message:
        kind = type(request).__name__
        log.debug("worker request %s", kind)
        if type(request) not in wire.RESPONSE_FOR:
            return wire.ErrorResponse(wire.ERR_MALFORMED, f"{kind} is not a request")
        try:
            return self._dispatch(request)
        except SingularInformationError as exc:
            return wire.ErrorResponse(wire.ERR_SOLVER, f"{kind}: {exc}")
        except DimensionMismatch as exc:
            return wire.ErrorResponse(wire.ERR_DIMENSION, f"{kind}: {exc}")
        except GlmError as exc:
            return wire.ErrorResponse(wire.ERR_MALFORMED, f"{kind}: {exc}")
        except Exception as exc:  # worker must survive anything a request triggers
            log.exception("internal failure on %s", kind)
            return wire.ErrorResponse(wire.ERR_INTERNAL, f"{kind}: {type(exc).__name__}: {exc}")

    def _check_dim(self, vec):
        if len(vec) != self.d:
            raise DimensionMismatch(f"expected dimension {self.d}, got {len(vec)}")

    def _dispatch(self, req):
        shard, fam = self.shard, self.family
        if isinstance(req, wire.ShardInfoRequest):
            return wire.ShardInfoResponse(shard.m, shard.d)
        if isinstance(req, wire.PilotDrawRequest):
            if req.n_k > shard.m:
                return wire.ErrorResponse(wire.ERR_ALLOCATION, f"asked for {req.n_k} rows, holding {shard.m}")
            pos = srswor(shard.m, req.n_k, make_rng(req.seed))
            return wire.PilotRowsResponse(shard.y[pos], shard.X[pos])
        if isinstance(req, wire.DerivativesRequest):
            self._check_dim(req.beta)
            return wire.DerivativesResponse(derivatives(fam, shard, req.beta))
        if isinstance(req, wire.LogLikRequest):
            self._check_dim(req.beta)
            return wire.LogLikResponse(log_lik_kernel(fam, shard, req.beta))
        if isinstance(req, wire.LocalFitRequest):
            self._check_dim(req.init)
            return wire.LocalFitResponse(fit_mle(fam, shard, req.init, req.tol, req.max_iter))
        if isinstance(req, wire.RestrictedFitRequest):
            self._check_dim(req.init)
            free = np.flatnonzero(req.free)
            return wire.LocalFitResponse(fit_mle(fam, shard, req.init, req.tol, req.max_iter, free=free))
        raise ProtocolError(f"unhandled request {type(req).__name__}")
