"""Living Bayesian three-level meta-analysis of intervention studies.

The pipeline runs: study ledger and screening (:mod:`.ledger`), effect sizes
(:mod:`.effects`), sampling covariance (:mod:`.covariance`), the three-level
model and its sampler (:mod:`.model`, :mod:`.sampler`, :mod:`.inference`),
living-mode versioning and gating (:mod:`.living`) and the report (:mod:`.report`).
"""

from .covariance import CovarianceSpec, SamplingCovariance, build_vcov, rho_phi_grid
from .effects import (EffectEstimate, compute_effects, g_from_gains, g_from_posttest,
                      g_from_statistic, hedges_correction, orient)
from .inference import (PosteriorDraws, PosteriorSummary, fit, gated_meta_regression,
                        prior_sensitivity, summarize)
from .ledger import Ledger, import_search_results, load_v1_fixture, validate_ledger
from .living import SnapshotStore, VersionRecord, cumulative_fit, gate_moderator
from .model import MetaData, MetaModel, ModelSpec
from .report import render_report
from .sampler import McmcConfig

__version__ = "0.1.0"

__all__ = [
    "CovarianceSpec", "SamplingCovariance", "build_vcov", "rho_phi_grid",
    "EffectEstimate", "compute_effects", "g_from_gains", "g_from_posttest", "g_from_statistic",
    "hedges_correction", "orient",
    "PosteriorDraws", "PosteriorSummary", "fit", "gated_meta_regression", "prior_sensitivity", "summarize",
    "Ledger", "import_search_results", "load_v1_fixture", "validate_ledger",
    "SnapshotStore", "VersionRecord", "cumulative_fit", "gate_moderator",
    "MetaData", "MetaModel", "ModelSpec", "render_report", "McmcConfig",
]
