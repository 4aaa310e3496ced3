"""
A year-sorted flight-delay surrogate
====================================

SYNTHETIC rows shaped like the airline delay data, stored in year
order so each worker holds a block of years.  The kernel log-likelihood
orders one-shot below one-step below global.
"""

from onestep_glm import DataShard, Family, in_process_session, run_one_step_protocol
from onestep_glm.dataio import AIRLINE_COLUMNS, AIRLINE_COVARIATES, synthetic_airline
from onestep_glm.estimators import global_estimate, run_one_shot
from onestep_glm.sharding import shard_contiguous
import numpy as np

table = synthetic_airline(200_000, seed=1)
y = table[:, AIRLINE_COLUMNS.index("Delayed")]
X = np.column_stack([np.ones(len(y))] + [table[:, AIRLINE_COLUMNS.index(c)] for c in AIRLINE_COVARIATES])
shards = shard_contiguous(len(y), 7).split(DataShard(y, X))

with in_process_session(shards, Family.LOGISTIC) as s:
    results = {"global": global_estimate(s),
               "one-step": run_one_step_protocol(s, Family.LOGISTIC, n=10_000, seed=1),
               "one-shot": run_one_shot(s)}
    for name, res in results.items():
        print(f"{name:>9}: log-lik {s.log_lik(res.beta):.2f}")
