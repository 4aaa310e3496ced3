"""Distributed GLM estimation with a pilot sample and a single Newton step."""

from .errors import *  # noqa: F401,F403
from .estimators import (
    EstimatorKind,
    csl_estimate,
    global_estimate,
    one_shot_estimate,
    one_step_estimate,
    pilot_estimate,
)
from .glm import (
    DataShard,
    DerivativeBundle,
    EstimateResult,
    Family,
    chol_solve,
    derivatives,
    fit_mle,
    log_lik_kernel,
    mean,
    variance_fn,
)
from .inference import (
    Hypothesis,
    TestMethod,
    TestResult,
    chi2_isf,
    chi2_sf,
    lrt_full,
    lrt_global,
    lrt_oneshot,
    lrt_pilot,
    lrt_subvector_onestep,
)
from .runtime import in_process_session, run_one_step_protocol, tcp_session
from .sharding import PartitionPlan, Strategy, draw_pilot, shard_by_covariate_sum, shard_random

__version__ = "0.1.0"
