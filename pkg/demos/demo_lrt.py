"""
Likelihood ratio tests on sharded data
======================================

Test whether the slope is zero with the global, one-step and one-shot
statistics.
"""

from onestep_glm import DataShard, Family, Hypothesis, in_process_session, lrt_global, lrt_oneshot
from onestep_glm import lrt_subvector_onestep
from onestep_glm.sharding import shard_random
from onestep_glm.simulation import gen_logistic, CovariateLaw

y, X = gen_logistic(20_000, [0.2, 0.15], CovariateLaw.INTERCEPT_PLUS_UNIFORM01, seed=4)
shards = shard_random(y.size, 5, seed=4).split(DataShard(y, X))
h0 = Hypothesis(((1, 0.0),))  # slope fixed at zero

with in_process_session(shards, Family.LOGISTIC) as session:
    for res in (lrt_global(session, h0),
                lrt_subvector_onestep(Family.LOGISTIC, h0, session, n=2_000, seed=1),
                lrt_oneshot(session, h0)):
        print(f"{res.method.value:>11}: statistic {res.statistic:8.3f}, df {res.df}, p-value {res.p_value:.4f}")
