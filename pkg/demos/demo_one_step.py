"""
One Newton step from a pilot sample
===================================

Five in-process workers hold random shards.  The master pools a 10%
pilot sample, fits it, and takes one Fisher step on the full data.
"""

import numpy as np

from onestep_glm import DataShard, Family, in_process_session, run_one_step_protocol
from onestep_glm.estimators import global_estimate, pilot_estimate
from onestep_glm.sharding import shard_random
from onestep_glm.simulation import gen_logistic

y, X = gen_logistic(20_000, [1.0, 2.0, 1.0], seed=7)
shards = shard_random(y.size, 5, seed=7).split(DataShard(y, X))

with in_process_session(shards, Family.LOGISTIC) as session:
    one_step = run_one_step_protocol(session, Family.LOGISTIC, n=2_000, seed=3)
    print("one-step:", np.round(one_step.beta, 4), f"({one_step.rounds} rounds)")
    print("bytes exchanged:", session.transcript.bytes_sent + session.transcript.bytes_received)

# the pilot alone, from the same draw
with in_process_session(shards, Family.LOGISTIC) as session:
    pilot = pilot_estimate(Family.LOGISTIC, session.pilot_rows(2_000, 3), 1e-8, 100)
    print("pilot:   ", np.round(pilot.beta, 4))

# the iterative global fit needs a round per Newton iteration
with in_process_session(shards, Family.LOGISTIC) as session:
    glob = global_estimate(session)
    print("global:  ", np.round(glob.beta, 4), f"({session.transcript.heavy_rounds} rounds)")
