import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from gpdfuse.gpd import cdf, ppf
from gpdfuse.simulate import (BlockSpec, ScenarioConfig, clusterwise_procedure, evaluate, generate,
                              latent_chain, make_rng, oracle_procedure, preset, true_cdf)


def test_section5_layout():
    cfg = preset("section5")
    g, s = cfg.true_gamma, cfg.true_sigma
    assert cfg.n == 120 and cfg.J == 1100 and cfg.rho == 0.999
    assert g[0] == 0.3 and g[99] == 0.3 and g[100] == pytest.approx(0.25) and g[-1] == pytest.approx(-0.2)
    # scale: 40, 35, ... per sub-block of 20 in blocks 1-6, 40 in block 7, 200, 250, ... afterwards
    assert s[:100:20].tolist() == [40, 35, 30, 25, 20]
    assert s[500] == 40 and s[619] == 40
    assert s[700:800:20].tolist() == [200, 250, 300, 350, 400]


def test_small_preset():
    cfg = preset("s5-small")
    assert (cfg.n, cfg.J) == (120, 110)
    assert np.unique(cfg.true_gamma).size == 11
    assert cfg.true_gamma[:10].tolist() == [0.3] * 10
    with pytest.raises(KeyError):
        preset("nope")


def test_reproducible():
    cfg = preset("s5-small", seed=4)
    a, b = generate(cfg), generate(cfg)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate(preset("s5-small", seed=5)))


def test_independent_columns_when_rho_zero():
    n = 5000
    Z = latent_chain(make_rng(1), n, 6, 0.0)
    c = np.corrcoef(Z, rowvar=False)[np.triu_indices(6, 1)]
    assert np.all(np.abs(c) < 3 / np.sqrt(n))


def test_chain_correlation_decay():
    Z = latent_chain(make_rng(2), 200_000, 5, 0.8)
    c = np.corrcoef(Z, rowvar=False)
    for lag in range(1, 5):
        assert c[0, lag] == pytest.approx(0.8**lag, abs=0.01)


@pytest.mark.parametrize("kind", ["full_gpd", "mixed"])
def test_marginals_ks(kind):
    cfg = ScenarioConfig(n=10_000, J=3, rho=0.5, blocks=BlockSpec(1, 1, 0.3, 0.25), tail_kind=kind, seed=9)
    raw = generate(cfg)
    for j in range(3):
        res = kstest(raw[:, j], lambda x, j=j: true_cdf(cfg, x, j))
        assert res.statistic < 1.63 / np.sqrt(cfg.n)


@settings(max_examples=50, deadline=None)
@given(g=st.floats(-0.45, 1.5), s=st.floats(0.1, 100), p=st.floats(1e-8, 1 - 1e-8))
def test_quantile_roundtrip(g, s, p):
    assert float(cdf(ppf(p, g, s), g, s)) == pytest.approx(p, abs=1e-10)


def test_identical_procedures_ratio_one():
    cfg = ScenarioConfig(n=200, J=3, rho=0.3, blocks=BlockSpec(3, 3), seed=1)
    rep = evaluate(4, cfg, {"clusterwise": clusterwise_procedure, "copy": clusterwise_procedure})
    assert np.all(rep.mse_ratio == 1.0) and np.all(rep.length_ratio == 1.0)
    assert rep.replications == 4 and rep.failed == 0
    assert np.all((rep.coverage["copy"] >= 0) & (rep.coverage["copy"] <= 1))
    lines = rep.to_csv().splitlines()
    assert len(lines) == 4 and lines[0].startswith("cluster,true_gamma")


def test_oracle_variance_ratio():
    cfg = ScenarioConfig(n=500, J=5, rho=0.0, blocks=BlockSpec(5, 1), seed=3)
    rep = evaluate(300, cfg, {"clusterwise": clusterwise_procedure,
                              "oracle": oracle_procedure([[0, 1, 2, 3, 4]])})
    assert 0.1 <= rep.mse_ratio.mean() <= 0.3


def test_evaluate_validation():
    cfg = ScenarioConfig(n=50, J=2, rho=0.0, blocks=BlockSpec(2, 1), seed=1)
    with pytest.raises(ValueError):
        evaluate(1, cfg, {"clusterwise": clusterwise_procedure})
    with pytest.raises(ValueError):
        ScenarioConfig(rho=1.0)
