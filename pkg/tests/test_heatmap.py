import numpy as np
import pytest

from rvconduct.heatmap import JacobianConfig, draw_market, jacobians, write_jacobians
from rvconduct.model import ConfigError
from rvconduct.supply import NestedLogitParams, solve_nested_logit_prices


@pytest.fixture(scope="module")
def default_jacobians():
    return draw_market(JacobianConfig()), jacobians(JacobianConfig())


def test_default_market_shape(default_jacobians):
    mkt, jac = default_jacobians
    assert sorted(jac) == [0.0, 0.2, 0.5, 0.8, 1.0]
    assert all(j.shape == (60, 60) for j, _, _ in jac.values())
    assert np.all(np.diff(mkt.firm) >= 0)


def test_partner_responses_turn_positive(default_jacobians):
    mkt, jac = default_jacobians
    partner = (mkt.effective[:, None] == mkt.effective[None, :]) & (mkt.firm[:, None] != mkt.firm[None, :])
    assert np.all(jac[0.0][0][partner] < 0)
    assert np.all(jac[1.0][0][partner] > 0)


def test_outside_share_rises_with_collusion(default_jacobians):
    _, jac = default_jacobians
    s0 = [jac[phi][2] for phi in sorted(jac)]
    assert np.all(np.diff(s0) > 0)
    assert 0.70 < s0[0] < 0.80


def test_single_product_matches_resolve():
    cfg = JacobianConfig(J=1, F=1, G=1, n_colluding=1, phis=(0.0,))
    mkt = draw_market(cfg)
    jac = jacobians(cfg)[0.0][0]
    nl = NestedLogitParams(cfg.sigma_nest, mkt.group)
    h = 1e-6

    def price(x):
        return solve_nested_logit_prices(x, mkt.xi, cfg.alpha, cfg.beta, cfg.gamma, nl, np.ones((1, 1)))[0]

    assert jac.shape == (1, 1)
    assert jac[0, 0] == pytest.approx((price(mkt.x + h) - price(mkt.x - h)) / (2 * h), rel=1e-6)


def test_files_written(tmp_path):
    paths = write_jacobians(JacobianConfig(J=12, phis=(0.0, 1.0)), tmp_path)
    assert [p.name for p in paths] == ["jacobian_phi_0.csv", "jacobian_phi_1.csv"]


@pytest.mark.parametrize("bad", [{"sigma_nest": 1.0}, {"sigma_nest": -0.1}, {"phis": (2.0,)}, {"n_colluding": 9}])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        JacobianConfig.from_dict(bad)
