"""Fitting, posterior summaries, predictive checks and sensitivity suites."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import Diagnostics, diagnose_arrays
from .model import (Exponential, HalfNormal, HalfStudentT, MetaData, MetaModel, ModelSpec,
                    Normal, describe_prior)
from .sampler import ChainFailure, McmcConfig, run_chain

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


class GateRefused(ValueError):
    pass


@dataclass
class PosteriorDraws:
    """Constrained draws keyed by parameter name, each shaped (chains, iterations)."""

    params: dict
    fixed: dict = field(default_factory=dict)
    divergences: int = 0
    failed_chains: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)

    @property
    def names(self):
        return list(self.params)

    @property
    def n_chains(self):
        return next(iter(self.params.values())).shape[0]

    @property
    def n_iterations(self):
        return next(iter(self.params.values())).shape[1]

    def flat(self, name):
        if name in self.params:
            return self.params[name].ravel()
        return np.full(self.n_chains * self.n_iterations, self.fixed[name])

    def beta(self):
        names = [n for n in self.params if n not in ("mu", "tau", "omega")]
        if not names:
            return np.zeros((self.n_chains * self.n_iterations, 0))
        return np.column_stack([self.params[n].ravel() for n in names])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "iteration", "parameter", "value"])
        for name, arr in self.params.items():
            for c in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    w.writerow([c, i, name, repr(float(arr[c, i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PosteriorDraws":
        rows = list(csv.DictReader(io.StringIO(text)))
        names = list(dict.fromkeys(r["parameter"] for r in rows))
        n_chain = max(int(r["chain"]) for r in rows) + 1
        n_iter = max(int(r["iteration"]) for r in rows) + 1
        params = {n: np.empty((n_chain, n_iter)) for n in names}
        for r in rows:
            params[r["parameter"]][int(r["chain"]), int(r["iteration"])] = float(r["value"])
        return cls(params)


def _chain_job(args):
    model, cfg, seed = args
    try:
        return run_chain(model, cfg, seed)
    except ChainFailure as exc:
        return exc


def fit(data: MetaData, spec: ModelSpec | None = None, cfg: McmcConfig | None = None,
        workers: int = 1) -> PosteriorDraws:
    """Sample the marginal posterior of (mu, tau, omega, beta).

    Chains use disjoint seed streams spawned from ``cfg.master_seed`` and are
    merged by chain index, so results do not depend on ``workers``.
    """
    spec = spec or ModelSpec()
    cfg = cfg or McmcConfig()
    model = MetaModel(data, spec)
    jobs = [(model, cfg, s) for s in cfg.chain_seeds()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    ok = [r for r in results if not isinstance(r, Exception)]
    failed = [f"chain {i}: {r}" for i, r in enumerate(results) if isinstance(r, Exception)]
    for msg in failed:
        logger.warning(msg)
    if not ok:
        raise FitError("all chains failed: " + "; ".join(failed))
    stacked = np.stack([r.draws for r in ok])  # (chains, iters, dim)
    params = {}
    col = 0
    for name in model.param_names:
        x = stacked[:, :, col]
        params[name] = np.exp(x) if name in ("tau", "omega") else x.copy()
        col += 1
    return PosteriorDraws(params=params, fixed=dict(model.fixed),
                          divergences=int(sum(r.divergent.sum() for r in ok)),
                          failed_chains=failed, step_sizes=[r.step_size for r in ok])


# -- summaries ----------------------------------------------------------------

@dataclass(frozen=True)
class ParamSummary:
    mean: float
    median: float
    sd: float
    lo95: float
    hi95: float
    rhat: float = float("nan")
    ess_bulk: float = float("nan")
    ess_tail: float = float("nan")


@dataclass
class PosteriorSummary:
    params: dict
    diagnostics: Diagnostics | None = None

    def __getitem__(self, name) -> ParamSummary:
        return self.params[name]

    @property
    def converged(self) -> bool:
        return self.diagnostics is not None and self.diagnostics.passed

    def to_dict(self):
        return {"parameters": {k: vars(v) for k, v in self.params.items()},
                "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None}


def diagnostics(draws: PosteriorDraws) -> Diagnostics:
    if draws.n_chains < 2:
        raise ValueError("diagnostics need at least 2 chains")
    out = diagnose_arrays(draws.params)
    out.divergences = draws.divergences
    return out


def summarize(draws) -> PosteriorSummary:
    """Mean, median, sd and equal-tailed 95% interval per parameter.

    ``draws`` may be a :class:`PosteriorDraws` or a plain mapping of arrays;
    convergence statistics are attached when there are at least two chains.
    """
    arrays = draws.params if isinstance(draws, PosteriorDraws) else dict(draws)
    diag = None
    multi = all(np.ndim(a) == 2 and np.shape(a)[0] >= 2 and np.shape(a)[1] >= 4
                for a in arrays.values())
    if multi:
        diag = diagnose_arrays(arrays)
        if isinstance(draws, PosteriorDraws):
            diag.divergences = draws.divergences
    out = {}
    for name, arr in arrays.items():
        x = np.asarray(arr, dtype=float).ravel()
        lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
        extra = {}
        if diag is not None:
            extra = dict(rhat=diag.rhat[name], ess_bulk=diag.ess_bulk[name],
                         ess_tail=diag.ess_tail[name])
        out[name] = ParamSummary(mean=float(x.mean()), median=float(med),
                                 sd=float(x.std(ddof=1)) if x.size > 1 else 0.0,
                                 lo95=float(lo), hi95=float(hi), **extra)
    return PosteriorSummary(out, diag)


# -- predictive and latent draws ------------------------------------------------

def _thinned(draws, max_draws):
    total = draws.n_chains * draws.n_iterations
    if max_draws is None or max_draws >= total:
        return np.arange(total)
    return np.linspace(0, total - 1, max_draws).round().astype(int)


def posterior_predictive(draws: PosteriorDraws, data: MetaData, seed=0, max_draws=None):
    """One replicated effect vector per retained draw, shape (draws, effects)."""
    rng = np.random.default_rng(seed)
    idx = _thinned(draws, max_draws)
    mu, tau, omega = (draws.flat(n)[idx] for n in ("mu", "tau", "omega"))
    beta = draws.beta()[idx]
    S, N, K = idx.size, data.n_effects, data.n_studies
    L = np.linalg.cholesky(data.V)
    mean = mu[:, None] + beta @ data.X.T
    u = rng.normal(size=(S, K)) * tau[:, None]
    w = rng.normal(size=(S, N)) * omega[:, None]
    e = rng.normal(size=(S, N)) @ L.T
    return mean + u[:, data.study_index] + w + e


def draw_random_effects(draws: PosteriorDraws, data: MetaData, seed=0, max_draws=None):
    """Conditional draws of study-level (u) and effect-level (w) deviations.

    Given (mu, tau, omega, beta) the latent vector z = (u, w) is Gaussian with
    mean C A' S^-1 r and covariance C - C A' S^-1 A C, where A = [Z, I],
    C = diag(tau^2, omega^2) and S the marginal covariance.
    """
    rng = np.random.default_rng(seed)
    idx = _thinned(draws, max_draws)
    Z = data.Z()
    N, K = data.n_effects, data.n_studies
    A = np.hstack([Z, np.eye(N)])
    beta = draws.beta()[idx]
    us, ws = [], []
    for s, i in enumerate(idx):
        tau, omega = draws.flat("tau")[i], draws.flat("omega")[i]
        c = np.r_[np.full(K, tau**2), np.full(N, omega**2)]
        S = tau**2 * Z @ Z.T + omega**2 * np.eye(N) + data.V
        r = data.y - draws.flat("mu")[i] - data.X @ beta[s]
        CA = c[:, None] * A.T
        sol = np.linalg.solve(S, np.c_[r, CA.T])
        m = CA @ sol[:, 0]
        cov = np.diag(c) - CA @ sol[:, 1:]
        z = rng.multivariate_normal(m, (cov + cov.T) / 2, method="eigh")
        us.append(z[:K])
        ws.append(z[K:])
    return np.array(us), np.array(ws)


# -- sensitivity ---------------------------------------------------------------

HETEROGENEITY_PRIORS = {
    "exponential(1)": Exponential(1.0),
    "half_normal(1)": HalfNormal(1.0),
    "half_student_t(3,1)": HalfStudentT(3.0, 1.0),
}
MU_PRIOR_SDS = (0.5, 1.0, 2.0)


def default_prior_grid(empirical_mu_prior=None):
    """(label, ModelSpec) for every mu-width x heterogeneity-family combination."""
    out = []
    for sd in MU_PRIOR_SDS:
        for label, het in HETEROGENEITY_PRIORS.items():
            out.append((f"mu~normal(0,{sd:g}); tau,omega~{label}",
                        ModelSpec(prior_mu=Normal(0.0, sd), prior_tau=het, prior_omega=het)))
    if empirical_mu_prior is not None:
        out.append((f"mu~empirical {describe_prior(empirical_mu_prior)}",
                    ModelSpec(prior_mu=empirical_mu_prior)))
    return out


@dataclass
class SensitivityRow:
    label: str
    spec: ModelSpec
    summary: PosteriorSummary | None
    error: str | None = None


@dataclass
class SensitivityTable:
    rows: list

    def pooled_means(self):
        return np.array([r.summary["mu"].mean for r in self.rows if r.summary is not None])

    @property
    def spread(self):
        m = self.pooled_means()
        return float(m.max() - m.min()) if m.size else float("nan")


def prior_sensitivity(data: MetaData, cfg: McmcConfig | None = None, variants=None,
                      workers: int = 1) -> SensitivityTable:
    cfg = cfg or McmcConfig()
    variants = default_prior_grid() if variants is None else list(variants)
    rows = []
    for label, spec in variants:
        try:
            rows.append(SensitivityRow(label, spec, summarize(fit(data, spec, cfg, workers))))
        except (FitError, ValueError) as exc:
            rows.append(SensitivityRow(label, spec, None, f"{type(exc).__name__}: {exc}"))
    return SensitivityTable(rows)


# -- moderators ------------------------------------------------------------------

def moderator_design(effects, study_values: dict, gate_result):
    """Design columns for one moderator, one row per effect.

    Categorical moderators get an indicator per non-reference gate level
    (a study coded with several levels is 1 in each of them); continuous
    moderators are centred so the intercept stays the average effect.
    """
    missing = sorted({e.study_id for e in effects if study_values.get(e.study_id) in (None, "missing")})
    if missing:
        raise GateRefused(f"moderator {gate_result.moderator_id!r} is missing for studies {missing}")
    if gate_result.kind == "continuous":
        x = np.array([float(study_values[e.study_id]) for e in effects])
        X, names = (x - x.mean())[:, None], [gate_result.moderator_id]
    else:
        levels = list(gate_result.level_counts)
        X = np.zeros((len(effects), len(levels) - 1))
        for i, e in enumerate(effects):
            v = study_values[e.study_id]
            vals = {str(t) for t in (v if isinstance(v, (list, tuple, set)) else [v])}
            for j, lev in enumerate(levels[1:]):
                X[i, j] = float(str(lev) in vals)
        names = [f"{gate_result.moderator_id}[{lev}]" for lev in levels[1:]]
    if X.shape[1] == 0 or np.any(np.ptp(X, axis=0) == 0):
        raise GateRefused(f"moderator {gate_result.moderator_id!r} has no contrast in the analysed effects")
    return X, names


def gated_meta_regression(effects, study_values: dict, gate_result, spec: ModelSpec | None = None,
                          cfg: McmcConfig | None = None, cov_spec=None, workers: int = 1):
    """Fit with the moderator added to the design; returns summaries of its coefficients.

    Refuses unless ``gate_result`` (from the living-mode gate) is eligible.
    """
    if not gate_result.eligible:
        raise GateRefused(f"moderator {gate_result.moderator_id!r} not eligible: "
                          f"{gate_result.deficit} (counts {gate_result.counts_text()})")
    X, names = moderator_design(effects, study_values, gate_result)
    data = MetaData.from_effects(effects, cov_spec, X=X, moderator_names=names)
    summary = summarize(fit(data, spec, cfg, workers))
    return PosteriorSummary({n: summary[n] for n in names}, summary.diagnostics)


def with_seed(cfg: McmcConfig, seed) -> McmcConfig:
    if isinstance(seed, np.random.SeedSequence):
        seed = int(seed.generate_state(1, dtype=np.uint64)[0])
    return replace(cfg, master_seed=int(seed))
