import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gpdfuse.gpd import (ClusterExceedances, DomainError, ExceedanceData, GpdParams, cdf,
                         cluster_neg_loglik, fisher_info, grad_neg_loglik, hessian_logdensity,
                         log_density, logpdf, neg_loglik, ppf, quantile_from_survival, sample,
                         score, survival)

from conftest import make_data

gammas = st.floats(-0.45, 2.0)
sigmas = st.floats(0.05, 50.0)


def reference_logpdf(y, gamma, sigma):
    # direct textbook form, used away from gamma = 0
    if gamma == 0:
        return -math.log(sigma) - y / sigma
    return (math.log(gamma + 1) - math.log(sigma)
            - (1 / gamma + 1) * math.log1p(gamma * (gamma + 1) * y / sigma))


def test_density_at_origin():
    assert log_density(1e-300, GpdParams(0.3, 40)) == pytest.approx(math.log(1.3 / 40), abs=1e-12)


def test_exponential_case():
    assert log_density(10, GpdParams(0.0, 40)) == pytest.approx(-math.log(40) - 0.25, abs=1e-14)


def test_continuity_through_zero_shape():
    assert abs(log_density(10, GpdParams(1e-9, 40)) - log_density(10, GpdParams(0.0, 40))) < 1e-7


@pytest.mark.parametrize("gamma", [-0.4, -0.1, -0.009, -1e-5, 1e-5, 0.009, 0.011, 0.3, 1.5])
def test_matches_textbook_form(gamma):
    for y in [0.01, 0.5, 3.0, 20.0]:
        p = GpdParams(gamma, 4.0)
        if y >= p.upper_endpoint:
            continue
        assert log_density(y, p) == pytest.approx(reference_logpdf(y, gamma, 4.0), rel=1e-10, abs=1e-12)


def test_domain_error_past_endpoint():
    p = GpdParams(-0.25, 1.0)
    with pytest.raises(DomainError):
        log_density(p.upper_endpoint * 1.01, p)
    with pytest.raises(ValueError):
        GpdParams(-0.5, 1.0)
    with pytest.raises(ValueError):
        GpdParams(0.1, 0.0)


def test_neg_loglik_examples():
    one = ExceedanceData([ClusterExceedances([10.0], raw_count=1)])
    assert neg_loglik(one, [0.0], [40.0]) == pytest.approx(math.log(40) + 0.25, abs=1e-14)
    two = ExceedanceData([ClusterExceedances([10.0, 3.0], 5), ClusterExceedances([10.0, 3.0], 5)])
    single = ExceedanceData([ClusterExceedances([10.0, 3.0], 5)])
    assert neg_loglik(two, [0.2, 0.2], [3.0, 3.0]) == pytest.approx(2 * neg_loglik(single, [0.2], [3.0]))
    empty = ExceedanceData([ClusterExceedances([], 3), ClusterExceedances([], 4)])
    assert neg_loglik(empty, [0.1, 0.2], [1.0, 1.0]) == 0.0
    gg, gs = grad_neg_loglik(empty, [0.1, 0.2], [1.0, 1.0])
    assert np.all(gg == 0) and np.all(gs == 0)


def test_neg_loglik_domain_error():
    d = ExceedanceData([ClusterExceedances([10.0], 1)])
    with pytest.raises(DomainError):
        neg_loglik(d, [-0.4], [1.0])
    assert cluster_neg_loglik(d, [-0.4], [1.0])[0] == np.inf


def test_mixed_empty_cluster_zero_gradient(rng):
    d = ExceedanceData([ClusterExceedances(sample(rng, 30, 0.2, 1.0), 30), ClusterExceedances([], 10)])
    gg, gs = grad_neg_loglik(d, [0.2, 0.3], [1.0, 2.0])
    assert gg[1] == 0 and gs[1] == 0 and gg[0] != 0


@settings(max_examples=60, deadline=None)
@given(gamma=gammas, sigma=sigmas, seed=st.integers(0, 2**32 - 1))
def test_gradient_finite_differences(gamma, sigma, seed):
    rng = np.random.default_rng(seed)
    data = make_data(rng, [gamma, gamma + 0.05], [sigma, 2 * sigma], 15)
    g = np.array([gamma, gamma + 0.05]) + 0.01
    s = np.array([sigma, 2 * sigma]) * 1.1
    gg, gs = grad_neg_loglik(data, g, s)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1
        fd_g = (neg_loglik(data, g + h * e, s) - neg_loglik(data, g - h * e, s)) / (2 * h)
        hs = h * s[j]
        fd_s = (neg_loglik(data, g, s + hs * e) - neg_loglik(data, g, s - hs * e)) / (2 * hs)
        assert abs(gg[j] - fd_g) <= 1e-4 * max(1.0, abs(fd_g))
        assert abs(gs[j] - fd_s) <= 1e-4 * max(1.0 / s[j], abs(fd_s))


@settings(max_examples=40, deadline=None)
@given(gamma=gammas, sigma=sigmas, y=st.floats(1e-3, 100.0))
def test_hessian_matches_score_differences(gamma, sigma, y):
    p = GpdParams(gamma, sigma)
    if y >= 0.9 * p.upper_endpoint:
        return
    h = 1e-6
    dgg, dgs, dss = hessian_logdensity(y, gamma, sigma)
    sg1, ss1 = score(y, gamma + h, sigma)
    sg0, ss0 = score(y, gamma - h, sigma)
    assert float(dgg) == pytest.approx((sg1 - sg0) / (2 * h), rel=1e-4, abs=1e-6)
    assert float(dgs) == pytest.approx((ss1 - ss0) / (2 * h), rel=1e-4, abs=1e-6)
    sg1, ss1 = score(y, gamma, sigma * (1 + h))
    sg0, ss0 = score(y, gamma, sigma * (1 - h))
    assert float(dss) == pytest.approx((ss1 - ss0) / (2 * h * sigma), rel=1e-4, abs=1e-6 / sigma**2)


@pytest.mark.parametrize("gamma,sigma", [(-0.4, 1.0), (-0.1, 3.0), (0.0, 2.0), (1e-6, 1.0), (0.3, 40.0), (1.2, 0.5)])
def test_density_integrates_to_one(gamma, sigma):
    p = GpdParams(gamma, sigma)
    f = lambda y: math.exp(float(logpdf(y, gamma, sigma)))
    upper = p.upper_endpoint
    if np.isfinite(upper):
        total, _ = integrate.quad(f, 0, upper, limit=200)
    else:
        # geometric pieces up to the 1e-12 upper quantile, then the known tail mass
        cut = float(quantile_from_survival(1e-12, gamma, sigma))
        edges = np.concatenate([[0.0], np.geomspace(1e-3 * sigma, cut, 60)])
        total = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
        total += 1e-12
    assert total == pytest.approx(1.0, rel=1e-6)


def test_fisher_info_closed_form():
    fi = fisher_info(GpdParams(0.0, 3.0))
    assert fi.i_gamma_gamma == 1.0 and fi.i_gamma_sigma == 0.0
    assert fi.i_sigma_sigma == pytest.approx(1 / 9)
    for g in (-0.3, 0.2, 1.0):
        assert fisher_info(GpdParams(g, 2.0)).i_gamma_sigma == 0.0


@pytest.mark.parametrize("gamma", [-0.3, 0.0, 0.3])
def test_information_and_score_identity_monte_carlo(gamma):
    rng = np.random.default_rng(11)
    sigma = 2.0
    y = sample(rng, 400_000, gamma, sigma)
    sg, ss = score(y, gamma, sigma)
    dgg, dgs, dss = hessian_logdensity(y, gamma, sigma)
    fi = fisher_info(GpdParams(gamma, sigma))
    n = len(y)
    for vals, target in [(sg, 0.0), (ss, 0.0), (-dgg, fi.i_gamma_gamma), (-dgs, 0.0), (-dss, fi.i_sigma_sigma)]:
        se = vals.std() / math.sqrt(n)
        assert abs(vals.mean() - target) < 3.5 * se + 1e-12


@settings(max_examples=50, deadline=None)
@given(gamma=gammas, sigma=sigmas, p=st.floats(1e-6, 1 - 1e-6))
def test_quantile_roundtrip(gamma, sigma, p):
    assert float(cdf(ppf(p, gamma, sigma), gamma, sigma)) == pytest.approx(p, abs=1e-10)


def test_survival_beyond_endpoint_is_zero():
    assert survival(10.0, -0.4, 1.0) == 0.0


def test_exceedance_data_bookkeeping():
    raw = np.array([[1.0, 5.0], [2.0, 0.0], [3.0, 0.0], [4.0, 7.0]])
    d = ExceedanceData.from_raw(raw, [1.5, 0.0])
    assert d.n_exceed.tolist() == [3, 2]
    assert d.raw_count.tolist() == [4, 4]
    assert d.exceed_prob.tolist() == [0.75, 0.5]
    assert d.clusters[0].y.tolist() == [0.5, 1.5, 2.5]
    k = ExceedanceData.from_raw_top_k(np.arange(20.0).reshape(10, 2), 3)
    assert k.n_exceed.tolist() == [3, 3]
    with pytest.raises(ValueError):
        ClusterExceedances([1.0, 0.0], 2)
