"""Synthetic multi-effect datasets drawn from the three-level model."""

from __future__ import annotations

import numpy as np

from .covariance import CovarianceSpec, build_vcov
from .effects import EffectEstimate


def effect_layout(rng, n_studies, max_outcomes=2, max_timepoints=2, n_range=(30, 200)):
    """Random study designs: sample sizes plus (outcome, timepoint) grids.

    Returns a list of oriented placeholder effects (g = 0) whose variances
    follow the equal-arm posttest approximation ``4/n``.
    """
    out = []
    for s in range(n_studies):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        n_out = int(rng.integers(1, max_outcomes + 1))
        n_tp = int(rng.integers(1, max_timepoints + 1))
        for o in range(n_out):
            for t in range(n_tp):
                out.append(EffectEstimate(
                    effect_id=f"s{s:03d}-o{o}-t{t}", study_id=f"s{s:03d}", g=0.0, var_g=4.0 / n,
                    group_label="ai-vs-control", outcome_label=f"outcome_{o}", timepoint_index=t,
                    oriented=True))
    return out


def simulate_effects(rng, layout, mu, tau, omega, cov_spec=None):
    """Draw observed effects for ``layout`` from the three-level model.

    Parameters
    ----------
    rng : numpy.random.Generator
    layout : list of EffectEstimate
        Provides study membership, labels and sampling variances.
    mu, tau, omega : float
        Pooled mean, between-study SD and within-study SD.
    cov_spec : CovarianceSpec, optional
        Correlation structure of the sampling errors.
    """
    cov = build_vcov(layout, cov_spec or CovarianceSpec())
    study = np.array([e.study_id for e in layout])
    ids, index = np.unique(study, return_inverse=True)
    u = rng.normal(0.0, tau, ids.size)[index]
    w = rng.normal(0.0, omega, len(layout))
    e = np.linalg.cholesky(cov.V) @ rng.standard_normal(len(layout))
    y = mu + u + w + e
    return [EffectEstimate(effect_id=x.effect_id, study_id=x.study_id, g=float(g), var_g=x.var_g,
                           group_label=x.group_label, outcome_label=x.outcome_label,
                           timepoint_index=x.timepoint_index, derivation=x.derivation, oriented=True)
            for x, g in zip(layout, y)]


def simulate_dataset(seed, n_studies=40, mu=0.3, tau=0.2, omega=0.4, cov_spec=None, **layout_kw):
    rng = np.random.default_rng(seed)
    return simulate_effects(rng, effect_layout(rng, n_studies, **layout_kw), mu, tau, omega, cov_spec)


def reconstruction_effects(ledger):
    """One effect per study from its reported pooled g and total n.

    Sampling variance uses the equal-arm approximation ``4/n + g^2/(2n)``.
    Study-level g is taken as the mean of the study's coded effects.
    """
    from .effects import compute_effects

    by_study = {}
    for e in compute_effects(ledger.studies):
        by_study.setdefault(e.study_id, []).append(e.g)
    out = []
    for s in ledger.studies:
        g = float(np.mean(by_study[s.study_id]))
        n = s.n_participants
        out.append(EffectEstimate(effect_id=f"{s.study_id}-pooled", study_id=s.study_id, g=g,
                                  var_g=4.0 / n + g * g / (2.0 * n), group_label="ai-vs-control",
                                  outcome_label="pooled", oriented=True))
    return out
