import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import genpareto

from gpdfuse.fitting import fit_clusterwise, fit_grouped, labels_to_partition, partition_labels
from gpdfuse.gpd import ClusterExceedances, ExceedanceData, TooFewExceedances, grad_neg_loglik, sample

from conftest import make_data


def grid_oracle(y, g_lo, g_hi, t_lo, t_hi, step):
    """Exhaustive grid minimizer of the GPD negative log-likelihood via scipy's density."""
    gs = np.arange(g_lo, g_hi + step / 2, step)
    ts = np.arange(t_lo, t_hi + step / 2, step)
    best = (np.inf, None, None)
    for g in gs:
        # scipy scale = sigma / (gamma + 1)
        scale = np.exp(ts)[:, None] / (g + 1.0)
        nll = -genpareto.logpdf(y[None, :], c=g, scale=scale).sum(axis=1)
        i = int(np.nanargmin(np.where(np.isfinite(nll), nll, np.inf)))
        if nll[i] < best[0]:
            best = (nll[i], g, ts[i])
    return best


def test_matches_grid_oracle(rng):
    y = sample(rng, 50, 0.2, 1.0)
    fit = fit_clusterwise(ExceedanceData([ClusterExceedances(y, 50)]))
    # coarse pass over the full box, then step 1e-3 around the coarse winner
    _, g0, t0 = grid_oracle(y, -0.45, 1.0, -3.0, 3.0, 0.01)
    _, g1, t1 = grid_oracle(y, max(-0.45, g0 - 0.03), g0 + 0.03, t0 - 0.03, t0 + 0.03, 1e-3)
    assert abs(fit.gamma[0] - g1) <= 1e-3
    assert abs(np.log(fit.sigma[0]) - t1) <= 1e-3


def test_stationarity(rng):
    data = make_data(rng, [-0.2, 0.0, 0.4], [1.0, 5.0, 0.3], 200)
    fit = fit_clusterwise(data)
    gg, gs = grad_neg_loglik(data, fit.gamma, fit.sigma)
    assert fit.converged.all()
    assert np.max(np.abs(gg)) < 1e-6 and np.max(np.abs(gs * fit.sigma)) < 1e-6


def test_large_sample_exponential(rng):
    n = 20_000
    fit = fit_clusterwise(make_data(rng, [0.0], [3.0], n))
    assert abs(fit.gamma[0]) < 3 / np.sqrt(n)


def test_duplicate_cluster_gives_identical_estimates(rng):
    y = sample(rng, 80, 0.1, 2.0)
    d = ExceedanceData([ClusterExceedances(y, 80), ClusterExceedances(y.copy(), 80)])
    fit = fit_clusterwise(d)
    assert fit.gamma[0] == fit.gamma[1] and fit.sigma[0] == fit.sigma[1]


def test_too_few_exceedances(rng):
    d = ExceedanceData([ClusterExceedances(sample(rng, 5, 0.1, 1.0), 5)])
    with pytest.raises(TooFewExceedances):
        fit_clusterwise(d)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_permutation_and_scale_equivariance(seed, scale):
    rng = np.random.default_rng(seed)
    y = sample(rng, 60, 0.15, 1.0)
    base = fit_clusterwise(ExceedanceData([ClusterExceedances(y, 60)]))
    perm = fit_clusterwise(ExceedanceData([ClusterExceedances(rng.permutation(y), 60)]))
    scaled = fit_clusterwise(ExceedanceData([ClusterExceedances(scale * y, 60)]))
    assert perm.gamma[0] == pytest.approx(base.gamma[0], abs=1e-7)
    assert scaled.gamma[0] == pytest.approx(base.gamma[0], abs=1e-6)
    assert scaled.sigma[0] == pytest.approx(scale * base.sigma[0], rel=1e-6)


def test_grouped_singletons_equal_clusterwise(rng):
    data = make_data(rng, [0.1, 0.3, -0.1], [1.0, 2.0, 3.0], 100)
    a = fit_clusterwise(data)
    b = fit_grouped(data, [[0], [1], [2]])
    np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-7)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-7)


def test_grouped_shares_shape_and_has_higher_loss(rng):
    data = make_data(rng, [0.2] * 4, [1.0, 2.0, 3.0, 4.0], 150)
    a = fit_clusterwise(data)
    b = fit_grouped(data, [[0, 1, 2, 3]])
    assert np.all(b.gamma == b.gamma[0])
    assert b.neg_loglik >= a.neg_loglik - 1e-9
    c = fit_grouped(data, np.array([0, 0, 1, 1]))
    assert c.gamma[0] == c.gamma[1] and c.gamma[2] == c.gamma[3]


def test_single_cluster_group_matches_clusterwise(rng):
    data = make_data(rng, [0.2, 0.2, 0.0], 1.0, 120)
    a = fit_clusterwise(data)
    b = fit_grouped(data, [[0, 1], [2]])
    assert b.gamma[2] == pytest.approx(a.gamma[2], abs=1e-7)


def test_grouped_variance_monte_carlo():
    # shape estimate of a 5-cluster group has variance (gamma+1)^2 / (5 n_j)
    rng = np.random.default_rng(5)
    est = []
    for _ in range(200):
        data = make_data(rng, [0.2] * 5, [1.0, 1.5, 2.0, 2.5, 3.0], 500)
        est.append(fit_grouped(data, [[0, 1, 2, 3, 4]]).gamma[0])
    target = 1.2**2 / 2500
    assert np.var(est, ddof=1) == pytest.approx(target, rel=0.25)


def test_partition_helpers():
    lab = partition_labels([[2, 0], [1]], 3)
    assert lab.tolist() == [0, 1, 0]
    assert [p.tolist() for p in labels_to_partition(lab)] == [[0, 2], [1]]
    with pytest.raises(ValueError):
        partition_labels([[0, 1], [1, 2]], 3)
    with pytest.raises(ValueError):
        partition_labels([[0]], 2)
