"""
Workers over TCP
================

Two workers serve their shards on localhost.  The master talks to them
with length-prefixed binary frames; results match the in-process run
bit for bit.
"""

import numpy as np

from onestep_glm import DataShard, Family, in_process_session, tcp_session
from onestep_glm.runtime import Worker, WorkerServer, wire
from onestep_glm.sharding import shard_random
from onestep_glm.simulation import gen_poisson

# a frame: 10-byte header then the payload
frame = wire.encode_frame(wire.DerivativesRequest(np.array([1.0])))
print("DerivativesRequest frame:", frame.hex(" "))

y, X = gen_poisson(4_000, [1.0, -1.0], seed=2)
shards = shard_random(y.size, 2, seed=2).split(DataShard(y, X))
servers = [WorkerServer(Worker(s, Family.POISSON)) for s in shards]
for srv in servers:
    srv.start_background()

beta = np.array([0.9, -0.8])
with tcp_session([f"127.0.0.1:{s.port}" for s in servers], Family.POISSON) as remote:
    over_tcp = remote.aggregate(beta)
    print("reply bytes per worker:", list(remote.transcript.rounds[-1].received))
with in_process_session(shards, Family.POISSON) as local:
    in_proc = local.aggregate(beta)
print("identical bundles:", over_tcp.same_as(in_proc))

for srv in servers:
    srv.stop()
