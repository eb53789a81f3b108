import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from livingmeta.model import (Exponential, Fixed, Flat, HalfNormal, HalfStudentT, MetaData, MetaModel,
                              ModelError, ModelSpec, Normal, describe_prior, grad_log_marginal_posterior,
                              log_marginal_posterior, prior_from_dict, prior_to_dict)
from livingmeta.simulate import simulate_dataset


@pytest.fixture(scope="module")
def data():
    effects = simulate_dataset(11, n_studies=6)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(len(effects), 2))
    return MetaData.from_effects(effects, X=X, moderator_names=["x1", "x2"])


def dense_loglik(data, mu, tau, omega, beta):
    S = data.marginal_cov(tau, omega)
    return stats.multivariate_normal(mu + data.X @ beta, S).logpdf(data.y)


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(0.0, 2), st.floats(0.001, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_loglik_matches_dense_mvn(data, mu, tau, omega, b1, b2):
    beta = np.array([b1, b2])
    fast = data.loglik(mu, tau**2, omega**2, beta)
    assert fast == pytest.approx(dense_loglik(data, mu, tau, omega, beta), rel=1e-9, abs=1e-9)


def test_loglik_derivatives_by_finite_differences(data):
    x0 = np.array([0.2, 0.09, 0.16, 0.3, -0.2])

    def f(x):
        return data.loglik(x[0], x[1], x[2], x[3:])

    _, *g = data.loglik(x0[0], x0[1], x0[2], x0[3:], grad=True)
    g = np.r_[g[0], g[1], g[2], g[3]]
    h = 1e-6
    fd = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(5)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_log_density_gradient(data):
    model = MetaModel(data, ModelSpec(prior_tau=HalfStudentT(3, 0.5), prior_omega=HalfNormal(0.5)))
    rng = np.random.default_rng(5)
    for _ in range(20):
        th = rng.uniform(-1.5, 1.5, model.dim)
        _, g = model.log_density_and_grad(th)
        h = 1e-6
        fd = [(model.log_density(th + h * e) - model.log_density(th - h * e)) / (2 * h)
              for e in np.eye(model.dim)]
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_parameter_vector_and_fixed_priors(data):
    model = MetaModel(data, ModelSpec(prior_tau=Fixed(0.0)))
    assert model.param_names == ["mu", "omega", "x1", "x2"]
    p = model.unpack([0.1, math.log(0.3), 0.5, -0.5])
    assert p["tau"] == 0.0 and p["omega"] == pytest.approx(0.3)
    assert np.allclose(model.pack(p), [0.1, math.log(0.3), 0.5, -0.5])


def test_conjugate_reduction():
    # tau = omega = 0, one effect: posterior of mu is normal with precision 1/v + 1.
    data = MetaData([0.5], [[0.25]], ["s"])
    spec = ModelSpec(prior_tau=Fixed(0.0), prior_omega=Fixed(0.0))
    mus = np.linspace(-1, 2, 7)
    lp = np.array([log_marginal_posterior({"mu": m}, data, spec) for m in mus])
    ref = stats.norm(0.4, math.sqrt(0.2)).logpdf(mus)
    assert np.allclose(lp - lp[0], ref - ref[0], atol=1e-12)


def test_jacobian_included():
    data = MetaData([0.1, -0.2], np.diag([0.1, 0.2]), ["a", "b"])
    spec = ModelSpec(prior_omega=Fixed(0.1))
    lp1 = log_marginal_posterior({"mu": 0.0, "tau": 0.5}, data, spec)
    ll = data.loglik(0.0, 0.25, 0.01)
    ref = ll + stats.norm(0, 1).logpdf(0) + stats.expon().logpdf(0.5) + math.log(0.5)
    assert lp1 == pytest.approx(ref, rel=1e-12)
    assert grad_log_marginal_posterior({"mu": 0.0, "tau": 0.5}, data, spec).shape == (2,)


class _HalfT:
    def __init__(self, df, scale):
        self.t = stats.t(df, scale=scale)

    def logpdf(self, x):
        return math.log(2) + self.t.logpdf(x)


@pytest.mark.parametrize("prior, ref", [
    (Normal(0.2, 0.5), stats.norm(0.2, 0.5)),
    (Exponential(2.0), stats.expon(scale=0.5)),
    (HalfNormal(0.7), stats.halfnorm(scale=0.7)),
    (HalfStudentT(3, 0.5), _HalfT(3, 0.5)),
])
def test_prior_densities_match_scipy(prior, ref):
    for x in (0.05, 0.3, 1.7):
        assert prior.logpdf(x) == pytest.approx(ref.logpdf(x), rel=1e-10)
        h = 1e-6
        assert prior.dlogpdf(x) == pytest.approx((ref.logpdf(x + h) - ref.logpdf(x - h)) / (2 * h), rel=1e-5)


def test_flat_prior_and_round_trip():
    assert Flat().logpdf(3.0) == 0.0
    for p in (Normal(0, 2), Exponential(1), HalfStudentT(3, 1), Fixed(0.0)):
        assert prior_from_dict(prior_to_dict(p)) == p
    assert describe_prior(Normal(0, 1)) == "Normal(mean=0, sd=1)"


def test_scale_priors_must_be_positive():
    with pytest.raises(ModelError):
        ModelSpec(prior_tau=Normal(0, 1))


def test_cross_study_covariance_rejected():
    with pytest.raises(ModelError):
        MetaData([0.1, 0.2], [[0.1, 0.01], [0.01, 0.1]], ["a", "b"])


def test_non_pd_rejected():
    with pytest.raises(ValueError):
        MetaData([0.1, 0.2], [[0.1, 0.2], [0.2, 0.1]], ["a", "a"])
