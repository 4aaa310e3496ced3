import socket

import numpy as np
import pytest

from onestep_glm import DataShard, Family, derivatives, fit_mle
from onestep_glm.errors import AggregationError
from onestep_glm.estimators import global_estimate
from onestep_glm.runtime import (
    InProcessTransport,
    MasterSession,
    Worker,
    WorkerServer,
    in_process_session,
    run_one_step_protocol,
    tcp_session,
    wire,
)
from onestep_glm.runtime.transport import TcpTransport, recv_frame
from onestep_glm.sharding import shard_by_covariate_sum, shard_random
from onestep_glm.simulation import gen_logistic

L = Family.LOGISTIC


def sym4():
    return DataShard(np.array([0.0, 1, 0, 1]), np.array([[-1.0], [-1], [1], [1]]))


@pytest.fixture
def logistic_data():
    y, X = gen_logistic(3000, [1.0, 2.0, 1.0], seed=12)
    return DataShard(y, X)


@pytest.fixture
def servers(logistic_data):
    shards = shard_random(logistic_data.m, 3, 4).split(logistic_data)
    srvs = [WorkerServer(Worker(s, L)) for s in shards]
    for s in srvs:
        s.start_background()
    yield shards, [f"127.0.0.1:{s.port}" for s in srvs]
    for s in srvs:
        s.stop()


# ---------------------------------------------------------------- worker


def test_worker_delegates_to_derivatives():
    w = Worker(sym4(), L)
    reply = wire.decode_frame(w.handle(wire.encode_frame(wire.DerivativesRequest(np.array([0.3])))))
    assert reply.bundle.same_as(derivatives(L, sym4(), np.array([0.3])))


def test_worker_census_pilot_returns_whole_shard():
    shard = DataShard(np.arange(5.0) % 2, np.arange(10.0).reshape(5, 2))
    reply = Worker(shard, L).respond(wire.PilotDrawRequest(5, 99))
    assert np.array_equal(reply.y, shard.y) and np.array_equal(reply.X, shard.X)


def test_worker_pilot_too_large_is_allocation_error():
    reply = Worker(sym4(), L).respond(wire.PilotDrawRequest(5, 1))
    assert isinstance(reply, wire.ErrorResponse) and reply.code == wire.ERR_ALLOCATION


def test_identical_requests_give_identical_bytes(logistic_data):
    w = Worker(logistic_data, L)
    req = wire.encode_frame(wire.DerivativesRequest(np.array([0.1, 0.2, 0.3])))
    assert w.handle(req) == w.handle(req)


def test_worker_error_codes():
    w = Worker(sym4(), L)
    bad = wire.decode_frame(w.handle(b"NOPE" + bytes(6)))
    assert isinstance(bad, wire.ErrorResponse) and bad.code == wire.ERR_MALFORMED
    dim = wire.decode_frame(w.handle(wire.encode_frame(wire.DerivativesRequest(np.zeros(3)))))
    assert dim.code == wire.ERR_DIMENSION
    not_req = w.respond(wire.LogLikResponse(1.0))
    assert not_req.code == wire.ERR_MALFORMED


def test_worker_reports_solver_failure():
    X = np.column_stack([np.ones(4), np.arange(4.0), 2 * np.arange(4.0)])
    w = Worker(DataShard(np.array([0.0, 1, 0, 1]), X), L)
    reply = w.respond(wire.LocalFitRequest(np.zeros(3), 1e-8, 50))
    assert isinstance(reply, wire.ErrorResponse) and reply.code == wire.ERR_SOLVER


# ---------------------------------------------------------------- master


def test_master_two_symmetric_workers():
    session = in_process_session([sym4(), sym4()], L)
    total = session.aggregate(np.array([0.0]))
    assert total.score.tolist() == [0.0]
    assert total.info.tolist() == [[2.0]]
    assert total.count == 8


def test_master_single_worker_is_that_bundle(logistic_data):
    beta = np.array([0.5, 1.0, -1.0])
    total = in_process_session([logistic_data], L).aggregate(beta)
    assert total.same_as(derivatives(L, logistic_data, beta))


def test_aggregate_matches_pooled(logistic_data):
    shards = shard_by_covariate_sum(logistic_data.X, 5).split(logistic_data)
    beta = np.array([0.9, 2.1, 0.8])
    pooled = derivatives(L, logistic_data, beta)
    total = in_process_session(shards, L).aggregate(beta)
    np.testing.assert_allclose(total.score, pooled.score, rtol=1e-12, atol=1e-12 * np.abs(pooled.score).max())
    np.testing.assert_allclose(total.info, pooled.info, rtol=1e-12)
    assert total.count == pooled.count


class _DeadTransport:
    concurrent = False

    def exchange(self, frame):
        raise ConnectionError("gone")

    def close(self):
        pass


def test_worker_down_is_named():
    session = MasterSession([InProcessTransport(Worker(sym4(), L)), _DeadTransport()], L)
    with pytest.raises(AggregationError) as info:
        session.aggregate(np.zeros(1))
    assert info.value.worker == 1 and "worker 1" in str(info.value)


def test_worker_error_aborts_round():
    session = in_process_session([sym4(), DataShard(np.zeros(2), np.zeros((2, 2)))], L)
    with pytest.raises(AggregationError):
        session.shard_info()  # dimensions disagree


def test_one_step_protocol_rounds_and_bytes(logistic_data):
    shards = shard_random(logistic_data.m, 4, 1).split(logistic_data)
    session = in_process_session(shards, L)
    res = run_one_step_protocol(session, L, 300, 7)
    t = session.transcript
    assert [r.kind for r in t.rounds] == ["ShardInfoRequest", "PilotDrawRequest", "DerivativesRequest"]
    assert t.heavy_rounds == 2 and t.metadata_rounds == 1 and res.rounds == 2
    d = 3
    assert set(t.rounds[2].received) == {wire.HEADER_SIZE + 8 * (d + d * d + 1) + 8}
    assert sum(t.rounds[1].received) == 4 * (wire.HEADER_SIZE + 8) + 300 * 8 * (d + 1)


def test_one_step_census_single_worker_is_global(logistic_data):
    session = in_process_session([logistic_data], L)
    res = run_one_step_protocol(session, L, logistic_data.m, 3)
    np.testing.assert_allclose(res.beta, fit_mle(L, logistic_data).beta, atol=1e-9)


def test_global_estimate_rounds(logistic_data):
    shards = shard_random(logistic_data.m, 3, 1).split(logistic_data)
    session = in_process_session(shards, L)
    fit = global_estimate(session)
    assert fit.converged and fit.rounds >= 3
    assert session.transcript.count("DerivativesRequest") == fit.rounds


# ---------------------------------------------------------------- TCP


def test_tcp_matches_in_process_bitwise(servers):
    shards, addrs = servers
    with tcp_session(addrs, L) as tcp, in_process_session(shards, L) as local:
        a = run_one_step_protocol(tcp, L, 200, 5)
        b = run_one_step_protocol(local, L, 200, 5)
        assert a.beta.tobytes() == b.beta.tobytes()
        ga, gb = global_estimate(tcp), global_estimate(local)
        assert ga.beta.tobytes() == gb.beta.tobytes()
        assert [r.received for r in tcp.transcript.rounds] == [r.received for r in local.transcript.rounds]


def test_tcp_shard_info(servers):
    shards, addrs = servers
    with tcp_session(addrs, L) as s:
        sizes, d = s.shard_info()
    assert sizes.tolist() == [sh.m for sh in shards] and d == 3


def test_server_survives_malformed_frame(servers):
    _, addrs = servers
    host, port = addrs[0].split(":")
    with socket.create_connection((host, int(port)), timeout=5) as sock:
        sock.sendall(b"JUNKJUNKJUNK")
        reply = wire.decode_frame(recv_frame(sock))
        assert isinstance(reply, wire.ErrorResponse) and reply.code == wire.ERR_MALFORMED
    # bad payload under a good header keeps the connection usable
    t = TcpTransport(host, int(port), timeout=5)
    bad = wire.HEADER.pack(wire.MAGIC, wire.VERSION, 0x03, 3) + b"abc"
    assert wire.decode_frame(t.exchange(bad)).code == wire.ERR_MALFORMED
    ok = wire.decode_frame(t.exchange(wire.encode_frame(wire.ShardInfoRequest())))
    assert isinstance(ok, wire.ShardInfoResponse)
    t.close()


def test_unreachable_worker_is_named():
    srv = WorkerServer(Worker(sym4(), L))
    port = srv.port
    srv.server_close()
    with pytest.raises(AggregationError) as info:
        tcp_session([f"127.0.0.1:{port}"], L)
    assert info.value.worker == 0
