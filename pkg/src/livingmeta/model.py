"""Three-level meta-analytic model with known sampling covariance.

Observed effects are modelled as

    g = mu + X beta + u[study] + w + e,
    u ~ N(0, tau^2),  w ~ N(0, omega^2),  e ~ N(0, V),

with the random effects integrated out analytically, so the marginal
likelihood is N(mu + X beta, tau^2 Z Z' + omega^2 I + V). Each study block
of V is eigendecomposed once; afterwards the block likelihood (a diagonal
plus a rank-one term) costs O(n) per evaluation via Sherman-Morrison and the
matrix determinant lemma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .covariance import CovarianceSpec, build_vcov, cholesky

LOG_2PI = math.log(2 * math.pi)


class ModelError(ValueError):
    pass


# -- priors ------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def logpdf(self, x):
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * LOG_2PI

    def dlogpdf(self, x):
        return -(x - self.mean) / self.sd**2

    def sample(self, rng, size=None):
        return rng.normal(self.mean, self.sd, size)


@dataclass(frozen=True)
class Flat:
    """Improper uniform prior; only for equivariance checks."""

    def logpdf(self, x):
        return 0.0

    def dlogpdf(self, x):
        return 0.0

    def sample(self, rng, size=None):
        raise ModelError("cannot sample from a flat prior")


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0
    positive = True

    def logpdf(self, x):
        return math.log(self.rate) - self.rate * x

    def dlogpdf(self, x):
        return -self.rate

    def sample(self, rng, size=None):
        return rng.exponential(1 / self.rate, size)


@dataclass(frozen=True)
class HalfNormal:
    sd: float = 1.0
    positive = True

    def logpdf(self, x):
        return math.log(2) + Normal(0.0, self.sd).logpdf(x)

    def dlogpdf(self, x):
        return -x / self.sd**2

    def sample(self, rng, size=None):
        return np.abs(rng.normal(0, self.sd, size))


@dataclass(frozen=True)
class HalfStudentT:
    df: float = 3.0
    scale: float = 1.0
    positive = True

    def logpdf(self, x):
        nu, s = self.df, self.scale
        return (math.log(2) + special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
                - 0.5 * math.log(nu * math.pi) - math.log(s)
                - (nu + 1) / 2 * math.log1p((x / s) ** 2 / nu))

    def dlogpdf(self, x):
        nu, s = self.df, self.scale
        return -(nu + 1) * x / (nu * s * s + x * x)

    def sample(self, rng, size=None):
        return np.abs(self.scale * rng.standard_t(self.df, size))


@dataclass(frozen=True)
class Fixed:
    """Point mass: the parameter is held at ``value`` and not sampled."""
    value: float = 0.0
    positive = True


PRIOR_TYPES = {"normal": Normal, "flat": Flat, "exponential": Exponential,
               "half_normal": HalfNormal, "half_student_t": HalfStudentT, "fixed": Fixed}


def prior_from_dict(d: dict):
    d = dict(d)
    return PRIOR_TYPES[d.pop("family")](**d)


def prior_to_dict(p) -> dict:
    name = {v: k for k, v in PRIOR_TYPES.items()}[type(p)]
    return {"family": name, **{k: getattr(p, k) for k in p.__dataclass_fields__}}


def describe_prior(p) -> str:
    args = ", ".join(f"{k}={getattr(p, k):g}" for k in p.__dataclass_fields__)
    return f"{type(p).__name__}({args})"


@dataclass(frozen=True)
class ModelSpec:
    prior_mu: object = Normal(0.0, 1.0)
    prior_tau: object = Exponential(1.0)
    prior_omega: object = Exponential(1.0)
    prior_beta: object = Normal(0.0, 1.0)
    residual_scale: float = field(default=1.0, init=False)

    def __post_init__(self):
        for name in ("prior_tau", "prior_omega"):
            if not getattr(getattr(self, name), "positive", False):
                raise ModelError(f"{name} must have support on the positive reals")

    def to_dict(self):
        return {"prior_mu": prior_to_dict(self.prior_mu),
                "prior_tau": prior_to_dict(self.prior_tau),
                "prior_omega": prior_to_dict(self.prior_omega),
                "prior_beta": prior_to_dict(self.prior_beta),
                "residual_scale": self.residual_scale}


# -- data --------------------------------------------------------------------

class MetaData:
    """Effects, their sampling covariance, study membership and moderators.

    Parameters
    ----------
    y : array (n,)
    V : array (n, n)
        Known sampling covariance; must be zero across studies.
    study : sequence (n,)
        Study identifier per effect.
    X : array (n, p), optional
        Moderator design matrix (no intercept column).
    """

    def __init__(self, y, V, study, X=None, moderator_names=None, effect_ids=None):
        y = np.asarray(y, dtype=float)
        V = np.asarray(V, dtype=float)
        n = y.size
        if V.shape != (n, n):
            raise ModelError("V has the wrong shape")
        cholesky(V)
        self.y, self.V = y, V
        self.study = list(study)
        self.effect_ids = list(effect_ids) if effect_ids is not None else [str(i) for i in range(n)]
        X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
        self.X = X
        self.moderator_names = list(moderator_names or [f"beta{j}" for j in range(X.shape[1])])
        if len(self.moderator_names) != X.shape[1]:
            raise ModelError("one name per moderator column required")

        self.study_ids = list(dict.fromkeys(self.study))
        code = {s: k for k, s in enumerate(self.study_ids)}
        self.study_index = np.array([code[s] for s in self.study], dtype=int)
        cross = self.study_index[:, None] != self.study_index[None, :]
        if np.any(V[cross] != 0):
            raise ModelError("V has nonzero covariance between different studies")

        # Rotate every block into the eigenbasis of its V block.
        order = np.argsort(self.study_index, kind="stable")
        si = self.study_index[order]
        self._starts = np.flatnonzero(np.r_[True, si[1:] != si[:-1]])
        Q = np.zeros((n, n))
        lam = np.zeros(n)
        for k, start in enumerate(self._starts):
            stop = self._starts[k + 1] if k + 1 < len(self._starts) else n
            idx = order[start:stop]
            w, vecs = np.linalg.eigh(V[np.ix_(idx, idx)])
            lam[start:stop] = w
            Q[np.ix_(idx, np.arange(start, stop))] = vecs
        self._lam = lam
        self._Qt = Q.T
        self._yt = Q.T @ y
        self._ut = Q.T @ np.ones(n)
        self._Xt = Q.T @ X
        self._u2 = self._ut**2
        self._ut_sum = np.add.reduceat(self._u2, self._starts)

    @classmethod
    def from_effects(cls, effects, cov_spec=None, X=None, moderator_names=None):
        cov = build_vcov(effects, cov_spec or CovarianceSpec())
        return cls([e.g for e in effects], cov.V, [e.study_id for e in effects], X=X,
                   moderator_names=moderator_names, effect_ids=[e.effect_id for e in effects])

    @property
    def n_effects(self):
        return self.y.size

    @property
    def n_studies(self):
        return len(self.study_ids)

    @property
    def n_moderators(self):
        return self.X.shape[1]

    def Z(self):
        Z = np.zeros((self.n_effects, self.n_studies))
        Z[np.arange(self.n_effects), self.study_index] = 1.0
        return Z

    def marginal_cov(self, tau, omega):
        Z = self.Z()
        return tau**2 * Z @ Z.T + omega**2 * np.eye(self.n_effects) + self.V

    def loglik(self, mu, tau2, omega2, beta=None, grad=False):
        """Marginal log-likelihood; optionally with derivatives wrt (mu, tau2, omega2, beta)."""
        rt = self._yt - mu * self._ut
        if self.n_moderators:
            rt = rt - self._Xt @ np.asarray(beta, dtype=float)
        D = self._lam + omega2
        if np.any(D <= 0):
            raise ModelError("marginal covariance is not positive definite")
        inv = 1.0 / D
        ut_inv = self._ut * inv
        rs = np.add.reduceat
        a = rs(rt * rt * inv, self._starts)
        b = rs(rt * ut_inv, self._starts)
        c = rs(self._ut * ut_inv, self._starts)
        k = 1.0 + tau2 * c
        quad = a - tau2 * b * b / k
        logdet = np.log(D).sum() + np.log(k).sum()
        ll = -0.5 * (self.n_effects * LOG_2PI + logdet + quad.sum())
        if not grad:
            return ll
        coef = (tau2 * b / k)
        sizes = np.diff(np.r_[self._starts, self.n_effects])
        alpha = rt * inv - np.repeat(coef, sizes) * ut_inv
        d_mu = float((b / k).sum())
        d_tau2 = 0.5 * float(((b / k) ** 2 - c / k).sum())
        e = rs(ut_inv * ut_inv, self._starts)
        tr_sinv = inv.sum() - float((tau2 * e / k).sum())
        d_omega2 = 0.5 * (float(alpha @ alpha) - tr_sinv)
        d_beta = self._Xt.T @ alpha
        return ll, d_mu, d_tau2, d_omega2, d_beta


# -- posterior in the sampler's coordinates ----------------------------------

class MetaModel:
    """Log posterior over the unconstrained vector (mu, log tau, log omega, beta).

    Parameters held by a :class:`Fixed` prior are dropped from the vector.
    """

    def __init__(self, data: MetaData, spec: ModelSpec | None = None):
        self.data = data
        self.spec = spec or ModelSpec()
        self.fixed = {}
        names = ["mu"]
        for p in ("tau", "omega"):
            prior = getattr(self.spec, f"prior_{p}")
            if isinstance(prior, Fixed):
                self.fixed[p] = float(prior.value)
            else:
                names.append(p)
        self.param_names = names + list(data.moderator_names)
        self.dim = len(self.param_names)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = {"mu": float(theta[0])}
        i = 1
        for p in ("tau", "omega"):
            if p in self.fixed:
                out[p] = self.fixed[p]
            else:
                out[p] = math.exp(theta[i])
                i += 1
        out["beta"] = theta[i:].copy()
        return out

    def pack(self, params):
        v = [params["mu"]]
        for p in ("tau", "omega"):
            if p not in self.fixed:
                v.append(math.log(params[p]))
        return np.r_[v, np.asarray(params.get("beta", np.zeros(0)), dtype=float)]

    def log_density(self, theta):
        return self.log_density_and_grad(theta, grad=False)

    def log_density_and_grad(self, theta, grad=True):
        prm = self.unpack(theta)
        mu, tau, omega, beta = prm["mu"], prm["tau"], prm["omega"], prm["beta"]
        sp = self.spec
        res = self.data.loglik(mu, tau * tau, omega * omega, beta, grad=grad)
        ll = res[0] if grad else res
        lp = ll + sp.prior_mu.logpdf(mu)
        for p, val in (("tau", tau), ("omega", omega)):
            if p not in self.fixed:
                lp += getattr(sp, f"prior_{p}").logpdf(val) + math.log(val)
        for bj in beta:
            lp += sp.prior_beta.logpdf(bj)
        if not grad:
            return lp
        _, d_mu, d_tau2, d_omega2, d_beta = res
        g = [d_mu + sp.prior_mu.dlogpdf(mu)]
        for p, val, d2 in (("tau", tau, d_tau2), ("omega", omega, d_omega2)):
            if p not in self.fixed:
                prior = getattr(sp, f"prior_{p}")
                g.append(2 * val * val * d2 + val * prior.dlogpdf(val) + 1.0)
        g.extend(d_beta + np.array([sp.prior_beta.dlogpdf(b) for b in beta]))
        return lp, np.asarray(g, dtype=float)

    def initial_point(self, rng):
        """Random start: uniform(-2, 2) on the unconstrained scale, like Stan."""
        return rng.uniform(-2, 2, self.dim)


def log_marginal_posterior(params: dict, data: MetaData, spec: ModelSpec | None = None) -> float:
    """Log posterior density (up to a constant) at constrained parameter values.

    Includes the log-Jacobian of the log transform for every sampled scale
    parameter, i.e. it is the density the sampler targets.
    """
    model = MetaModel(data, spec)
    lp = model.log_density(model.pack(params))
    if not math.isfinite(lp):
        raise ModelError(f"non-finite log density at {params}")
    return lp


def grad_log_marginal_posterior(params: dict, data: MetaData, spec: ModelSpec | None = None):
    """Gradient wrt (mu, log tau, log omega, beta), skipping fixed parameters."""
    model = MetaModel(data, spec)
    return model.log_density_and_grad(model.pack(params))[1]
