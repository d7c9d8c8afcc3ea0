import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ihmm.emissions import (
    EmissionParams,
    NiwHyper,
    _ldl_params,
    conditional_gaussian,
    ldl_log_jacobian,
    logpdf,
    mh_decomposition_update,
    niw_posterior,
    posterior_update,
    sample_inverse_wishart,
    sample_prior,
    sample_truncated_mvn,
)
from ihmm.exceptions import NonFiniteInput, SingularObservedBlock

from oracles import batch_means_se, niw_grid_moments


def random_spd(rng, p):
    A = rng.standard_normal((p, p))
    return A @ A.T + 0.5 * np.eye(p)


def test_inverse_wishart_p1_is_inverse_gamma(rng):
    draws = np.array([sample_inverse_wishart(5.0, np.array([[2.0]]), rng)[0, 0] for _ in range(4000)])
    assert stats.kstest(draws, stats.invgamma(2.5, scale=1.0).cdf).pvalue > 0.01


def test_inverse_wishart_marginal_matches_scipy():
    rng = np.random.default_rng(0)
    scale = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, -0.4], [0.0, -0.4, 1.5]])
    ours = np.array([sample_inverse_wishart(7.0, scale, rng) for _ in range(20000)])
    ref = stats.invwishart(df=7.0, scale=scale).rvs(size=20000, random_state=2)
    for i, j in [(0, 0), (1, 1), (2, 1)]:
        assert stats.ks_2samp(ours[:, i, j], ref[:, i, j]).pvalue > 0.01
    # E(Sigma) = scale / (nu - p - 1)
    np.testing.assert_allclose(ours.mean(axis=0), scale / 3.0, atol=0.03)


def test_inverse_wishart_draw_is_spd(rng):
    for p in (1, 2, 5):
        S = sample_inverse_wishart(p + 0.5, random_spd(rng, p), rng)
        np.testing.assert_array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() > 0


def test_logpdf_examples():
    unit = EmissionParams(np.zeros(2), np.eye(2))
    assert logpdf(np.zeros(2), unit) == pytest.approx(-np.log(2 * np.pi), abs=1e-14)
    assert logpdf(np.array([1.0, 0.0]), unit) == pytest.approx(-np.log(2 * np.pi) - 0.5, abs=1e-14)
    with pytest.raises(NonFiniteInput):
        logpdf(np.array([np.nan, 0.0]), unit)


def test_logpdf_matches_dense_inverse(rng):
    for p in (1, 3, 6):
        S = random_spd(rng, p)
        mu = rng.standard_normal(p)
        Y = rng.standard_normal((5, p))
        r = Y - mu
        ref = (-0.5 * np.einsum("ij,jk,ik->i", r, np.linalg.inv(S), r)
               - 0.5 * np.linalg.slogdet(S)[1] - 0.5 * p * np.log(2 * np.pi))
        np.testing.assert_allclose(logpdf(Y, EmissionParams(mu, S)), ref, rtol=1e-10)


def test_empty_update_is_prior_draw():
    h = NiwHyper.default(3)
    a = posterior_update(h, np.zeros((0, 3)), np.random.default_rng(5))
    b = sample_prior(h, np.random.default_rng(5))
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.sigma, b.sigma)


def test_symmetric_data_gives_centred_mean(rng):
    h = NiwHyper.default(2)
    y = np.array([[1.0, -2.0], [-1.0, 2.0]])
    mus = np.array([posterior_update(h, y, rng).mu for _ in range(20000)])
    np.testing.assert_allclose(mus.mean(axis=0), 0.0, atol=0.02)


def test_niw_posterior_matches_quadrature():
    y = np.random.default_rng(3).normal(1.0, 0.7, size=50)
    post = niw_posterior(NiwHyper.default(1), y[:, None])
    g = niw_grid_moments(y)
    assert post.mu0[0] == pytest.approx(g["mean_mu"], rel=0.02)
    # marginal variance of mu is scale_n / (lam_n (nu_n - 2))
    assert post.scale[0, 0] / (post.lam * (post.nu - 2)) == pytest.approx(g["var_mu"], rel=0.02)


def test_conditional_gaussian_bivariate():
    params = EmissionParams(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    mean, cov = conditional_gaussian(params, [0], [1.0])
    assert mean[0] == pytest.approx(0.5)
    assert cov[0, 0] == pytest.approx(0.75)


def test_conditioning_in_steps_equals_one_shot(rng):
    S = random_spd(rng, 4)
    mu = rng.standard_normal(4)
    y = rng.standard_normal(4)
    m1, c1 = conditional_gaussian(EmissionParams(mu, S), [0, 2], y[[0, 2]])
    # condition on 0 first, then on 2 within the remaining (1, 2, 3)
    m_a, c_a = conditional_gaussian(EmissionParams(mu, S), [0], y[:1])
    m2, c2 = conditional_gaussian(EmissionParams(m_a, c_a), [1], y[2:3])
    np.testing.assert_allclose(m2, m1, atol=1e-12)
    np.testing.assert_allclose(c2, c1, atol=1e-12)


def test_singular_observed_block():
    S = np.array([[1.0, 1.0, 0.2], [1.0, 1.0, 0.2], [0.2, 0.2, 1.0]])
    with pytest.raises(SingularObservedBlock):
        conditional_gaussian(EmissionParams(np.zeros(3), S + np.diag([0, -1e-9, 0])), [0, 1], [0.0, 0.0])


def test_truncated_normal_tail_mean(rng):
    # N(0,1) restricted to x <= -1.14 has mean -phi(c) / Phi(c)
    x = np.array([sample_truncated_mvn(np.zeros(1), np.eye(1), np.array([-1.14]), rng, sweeps=1)[0]
                  for _ in range(20000)])
    c = -1.14
    assert x.max() <= c
    assert x.mean() == pytest.approx(-stats.norm.pdf(c) / stats.norm.cdf(c), abs=0.01)


def test_truncated_mvn_unbounded_is_gaussian(rng):
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    X = sample_truncated_mvn(np.zeros((5000, 2)), cov, np.full(2, np.inf), rng)
    assert stats.kstest(X[:, 1] / np.sqrt(2.0), "norm").pvalue > 0.01


def test_truncated_mvn_diagonal_margins(rng):
    cov = np.diag([1.0, 4.0])
    upper = np.array([0.5, -1.0])
    X = sample_truncated_mvn(np.zeros((5000, 2)), cov, upper, rng, sweeps=3)
    assert np.all(X <= upper)
    for d, sd in enumerate([1.0, 2.0]):
        ref = stats.truncnorm(-np.inf, upper[d] / sd, scale=sd)
        assert stats.kstest(X[:, d], ref.cdf).pvalue > 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_truncated_mvn_respects_bounds(p, seed):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, p)
    upper = rng.normal(size=p) - 1.0
    upper[rng.random(p) < 0.3] = np.inf
    X = sample_truncated_mvn(rng.normal(size=(20, p)), S, upper, rng, sweeps=2)
    assert np.all(X <= upper)


def _sigma_from(theta, p):
    M = np.eye(p)
    k = p * (p - 1) // 2
    M[np.tril_indices(p, -1)] = theta[:k]
    return (M * np.exp(theta[k:])) @ M.T


def test_ldl_jacobian_by_finite_differences(rng):
    for p in (1, 2, 3, 4):
        S = random_spd(rng, p)
        M, d = _ldl_params(S)
        np.testing.assert_allclose((M * d) @ M.T, S, atol=1e-12)
        theta = np.concatenate([M[np.tril_indices(p, -1)], np.log(d)])
        il = np.tril_indices(p)
        J = np.empty((theta.size, theta.size))
        h = 1e-6
        for i in range(theta.size):
            e = np.zeros(theta.size)
            e[i] = h
            J[:, i] = (_sigma_from(theta + e, p)[il] - _sigma_from(theta - e, p)[il]) / (2 * h)
        assert ldl_log_jacobian(np.log(d)) == pytest.approx(np.linalg.slogdet(J)[1], abs=1e-5)


def test_mh_update_targets_the_conjugate_posterior():
    rng = np.random.default_rng(11)
    h = NiwHyper.default(2)
    data = rng.multivariate_normal([0.5, -0.5], [[1.0, 0.4], [0.4, 0.8]], size=30)
    post = niw_posterior(h, data)
    cur = EmissionParams(post.mu0.copy(), np.eye(2))
    trace = []
    for i in range(30000):
        cur, _ = mh_decomposition_update(h, data, cur, rng, step=0.3)
        if i >= 2000:
            trace.append([cur.mu[0], cur.sigma[0, 0], cur.sigma[1, 0], cur.sigma[1, 1]])
    trace = np.array(trace)
    want = [post.mu0[0], *(post.scale / (post.nu - 3))[[0, 1, 1], [0, 0, 1]]]
    for j in range(4):
        se = batch_means_se(trace[:, j])
        assert abs(trace[:, j].mean() - want[j]) < 4 * se + 1e-3
