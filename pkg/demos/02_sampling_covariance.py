"""Sampling-error covariance for studies reporting several dependent effects."""

import numpy as np

from livingmeta.covariance import CovarianceSpec, build_vcov, cholesky, effective_precision
from livingmeta.effects import EffectEstimate

# one study: two outcomes, each measured at post-test and at follow-up
study = [
    EffectEstimate("post_algebra", "s1", 0.40, 0.04, "ai-vs-ctl", "algebra", 0, oriented=True),
    EffectEstimate("follow_algebra", "s1", 0.30, 0.05, "ai-vs-ctl", "algebra", 1, oriented=True),
    EffectEstimate("post_geometry", "s1", 0.20, 0.06, "ai-vs-ctl", "geometry", 0, oriented=True),
    EffectEstimate("follow_geometry", "s1", 0.25, 0.07, "ai-vs-ctl", "geometry", 1, oriented=True),
    EffectEstimate("other_study", "s2", 0.10, 0.03, "ai-vs-ctl", "algebra", 0, oriented=True),
]

cov = build_vcov(study, CovarianceSpec(rho=0.7, phi=0.8))
np.set_printoptions(precision=4, suppress=True)
print("V =")
print(cov.V)

# correlations: rho for a different outcome, phi^lag across timepoints, product for both
sd = np.sqrt(np.diag(cov.V))
print("\ncorrelations =")
print(cov.V / np.outer(sd, sd))

# every study block must be positive definite; nothing is regularized
L = cholesky(cov.V)
print("\nCholesky diagonal:", np.diag(L))

# dependence lowers how much a study block is worth
block = cov.V[np.ix_(cov.blocks["s1"], cov.blocks["s1"])]
print(f"\nprecision of study s1: {effective_precision(block):.2f} "
      f"(as if independent: {np.sum(1 / np.diag(block)):.2f})")
