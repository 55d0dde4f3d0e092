import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from gpdfuse.inference import (BoundaryWarning, exceed_prob, return_level, return_level_ci,
                               return_level_partials, return_level_table, return_level_variance_terms)
from gpdfuse.gpd import ClusterExceedances, ExceedanceData

gammas = st.floats(-0.45, 1.5)
sigmas = st.floats(0.1, 100.0)


def test_exponential_return_level():
    rl = return_level(0.0, 40.0, 1 / 240)
    assert rl == pytest.approx(40 * math.log(240), rel=1e-14)
    # 219.2255..., empirical quantile cross-check
    rng = np.random.default_rng(3)
    q = np.quantile(rng.exponential(40.0, 10**7), 1 - 1 / 240)
    assert abs(q - rl) / rl < 0.01


def test_level_at_threshold_probability():
    assert return_level(0.3, 2.0, 0.1, xi=0.1, w=5.0) == 5.0
    with pytest.raises(ValueError):
        return_level(0.3, 2.0, 0.2, xi=0.1)


def test_shape_zero_continuity():
    a = return_level(1e-9, 40.0, 1 / 240, 0.5, 1.0)
    b = return_level(0.0, 40.0, 1 / 240, 0.5, 1.0)
    assert abs(a - b) / b < 1e-6


def test_closed_form_away_from_zero():
    g, s, tau, xi, w = 0.3, 2.0, 0.001, 0.05, 3.0
    expect = w + s / (g * (g + 1)) * ((tau / xi) ** (-g) - 1)
    assert return_level(g, s, tau, xi, w) == pytest.approx(expect, rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(gamma=gammas, sigma=sigmas, xi=st.floats(0.01, 1.0), frac=st.floats(1e-4, 0.99))
def test_partials_match_finite_differences(gamma, sigma, xi, frac):
    tau = frac * xi
    rg, rs, rx = return_level_partials(gamma, sigma, tau, xi)
    h = 1e-6
    fd_g = (return_level(gamma + h, sigma, tau, xi) - return_level(gamma - h, sigma, tau, xi)) / (2 * h)
    fd_s = (return_level(gamma, sigma * (1 + h), tau, xi) - return_level(gamma, sigma * (1 - h), tau, xi)) / (2 * h * sigma)
    hx = h * xi
    if xi + hx <= 1:
        fd_x = (return_level(gamma, sigma, tau, xi + hx) - return_level(gamma, sigma, tau, xi - hx)) / (2 * hx)
        assert float(rx) == pytest.approx(fd_x, rel=1e-4, abs=1e-6 * sigma / xi)
    scale = sigma * max(1.0, abs(math.log(frac))) ** 2
    assert float(rg) == pytest.approx(fd_g, rel=1e-4, abs=1e-7 * scale)
    assert float(rs) == pytest.approx(fd_s, rel=1e-4, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(gamma=gammas, sigma=sigmas, xi=st.floats(0.01, 1.0), frac=st.floats(1e-6, 0.999), w=st.floats(-10, 10))
def test_exceed_prob_inverts_return_level(gamma, sigma, xi, frac, w):
    tau = frac * xi
    x = return_level(gamma, sigma, tau, xi, w)
    assert exceed_prob(gamma, sigma, xi, w, x) == pytest.approx(tau, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(gamma=gammas, sigma=sigmas, xi=st.floats(0.01, 1.0), a=st.floats(1e-4, 0.99), b=st.floats(1e-4, 0.99))
def test_return_level_decreasing_in_tau(gamma, sigma, xi, a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    assert return_level(gamma, sigma, lo * xi, xi) > return_level(gamma, sigma, hi * xi, xi)


def test_exceed_prob_edges():
    assert exceed_prob(0.2, 1.0, 0.3, 2.0, 2.0) == pytest.approx(0.3)
    assert exceed_prob(-0.4, 1.0, 0.3, 0.0, 100.0) == 0.0


def test_grouped_interval_shorter():
    a = return_level_ci(0.2, 3.0, 0.05, 5 * 200, 200, 4000, 1e-3)
    b = return_level_ci(0.2, 3.0, 0.05, None, 200, 4000, 1e-3)
    assert a.point == b.point and a.length < b.length
    assert a.ci_lower <= a.point <= a.ci_upper


def test_interval_uses_normal_quantile():
    e = return_level_ci(0.1, 2.0, 0.1, 300, 300, 3000, 1e-3, p=0.05)
    assert (e.ci_upper - e.point) / e.se == pytest.approx(norm.isf(0.025))
    assert norm.isf(0.025) == pytest.approx(1.959964, abs=1e-6)


def test_group_size_scaling():
    v1 = return_level_variance_terms(0.2, 2.0, 0.1, 100, 100, 1000, 1e-3)
    v4 = return_level_variance_terms(0.2, 2.0, 0.1, 400, 100, 1000, 1e-3)
    assert v1[0] / v4[0] == pytest.approx(4.0, rel=1e-14)
    assert v1[1] == v4[1] and v1[2] == v4[2]


def test_boundary_flag():
    with pytest.warns(BoundaryWarning):
        e = return_level_ci(-0.5 + 1e-5, 1.0, 0.1, 100, 100, 1000, 1e-3)
    assert e.boundary and np.isfinite(e.se)


def test_table_uses_group_totals():
    data = ExceedanceData([ClusterExceedances(np.ones(20), 100), ClusterExceedances(np.ones(30), 100),
                           ClusterExceedances(np.ones(10), 50)])
    est = return_level_table([0.1, 0.1, 0.2], [1.0, 1.0, 1.0], data, 1e-3, labels=np.array([0, 0, 1]))
    assert [e.group_size_n for e in est] == [50, 50, 10]
    assert est[0].xi == 0.2 and est[2].raw_n == 50
