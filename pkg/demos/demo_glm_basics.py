"""
Fitting a logistic regression on one machine
============================================

Derivative bundles, Fisher scoring, and the fitted coefficients.
"""

import numpy as np

from onestep_glm import DataShard, Family, derivatives, fit_mle
from onestep_glm.simulation import gen_logistic

# simulate 5,000 rows with three standard-normal covariates
y, X = gen_logistic(5_000, [1.0, 2.0, 1.0], seed=1)
data = DataShard(y, X)

# score, information and log-likelihood at the origin
bundle = derivatives(Family.LOGISTIC, data, np.zeros(3))
print("score at 0:", np.round(bundle.score, 2))
print("information diagonal at 0:", np.round(np.diag(bundle.info), 2))

# Fisher scoring from the origin
fit = fit_mle(Family.LOGISTIC, data)
print(f"beta_hat = {np.round(fit.beta, 4)} after {fit.iterations} iterations, log-lik {fit.log_lik:.3f}")

# standard errors from the inverse information at the estimate
info = derivatives(Family.LOGISTIC, data, fit.beta).info
print("std errors:", np.round(np.sqrt(np.diag(np.linalg.inv(info))), 4))
