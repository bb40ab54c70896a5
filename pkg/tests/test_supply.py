import numpy as np
import pytest
from scipy import optimize

from conftest import random_market
from rvconduct.demand import logit_shares, rc_shares
from rvconduct.model import ConductSpec, ConfigError, ConvergenceError, DemandParams, build_ownership
from rvconduct.supply import (
    NestedLogitParams,
    _nested_logit_dA,
    foc_residual,
    markup_logit_closed_form,
    nested_logit_foc,
    nested_logit_price_jacobian,
    nested_logit_share_derivatives,
    nested_logit_shares,
    rc_kernel,
    recover_mc,
    solve_nested_logit_prices,
    solve_prices,
)


@pytest.mark.parametrize("sigma_x", [0.0, 2.0])
def test_equilibrium_satisfies_foc(quad, sigma_x):
    rng = np.random.default_rng(10 + int(sigma_x))
    for _ in range(10):
        m = random_market(rng, sigma_x=sigma_x)
        p = solve_prices(m["mc"], m["delta_bar"], m["x"], m["params"], quad, m["H"])
        kernel = rc_kernel(m["delta_bar"], m["x"], m["params"], quad)
        assert np.max(np.abs(foc_residual(p, m["mc"], kernel, m["H"]))) < 1e-10


def test_single_product_monopoly_matches_bisection(quad):
    """Logit monopoly: p - c = 1 / (alpha (1 - s)); solved independently by brentq."""
    alpha, c, d = 1.5, 1.2, 0.7
    params = DemandParams(alpha=alpha)
    p = solve_prices(np.array([c]), np.array([d]), np.zeros(1), params, quad, np.ones((1, 1)))

    def g(price):
        s = 1.0 / (1.0 + np.exp(-(d - alpha * price)))
        return price - c - 1.0 / (alpha * (1.0 - s))

    oracle = optimize.brentq(g, c, c + 20.0, xtol=1e-14)
    assert p[0] == pytest.approx(oracle, abs=1e-11)


@pytest.mark.parametrize("phi, regime", [(0.0, "competition"), (1.0, "full_collusion")])
def test_logit_markups_match_closed_form(quad, phi, regime):
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = random_market(rng, phi=phi)
        p = solve_prices(m["mc"], m["delta_bar"], m["x"], m["params"], quad, m["H"])
        delta = m["delta_bar"] - m["params"].alpha * p
        closed = markup_logit_closed_form(delta, m["firm"], m["effective"], m["params"].alpha, regime)
        np.testing.assert_allclose(p - m["mc"], closed, atol=1e-8)


def test_markups_rise_with_internalization(quad):
    rng = np.random.default_rng(12)
    for _ in range(20):
        m = random_market(rng, J=6, F=3, sigma_x=1.0)
        colluders = m["effective"] == 0
        means = []
        for phi in (0.0, 0.25, 0.5, 0.75, 1.0):
            H = build_ownership(m["firm"], ConductSpec(phi, m["effective"]))
            p = solve_prices(m["mc"], m["delta_bar"], m["x"], m["params"], quad, H)
            means.append(np.mean((p - m["mc"])[colluders]))
        assert np.all(np.diff(means) >= -1e-12)


@pytest.mark.parametrize("sigma_x", [0.0, 1.5])
def test_recover_mc_inverts_pricing(quad, sigma_x):
    rng = np.random.default_rng(13)
    m = random_market(rng, J=7, F=3, sigma_x=sigma_x, phi=0.5)
    params = m["params"]
    p = solve_prices(m["mc"], m["delta_bar"], m["x"], params, quad, m["H"])
    s = rc_shares(m["delta_bar"] - params.alpha * p, m["x"], sigma_x, quad)
    mc, eta = recover_mc(p, s, m["x"], params, quad, m["H"])
    np.testing.assert_allclose(mc, m["mc"], atol=1e-9)
    np.testing.assert_allclose(eta, p - m["mc"], atol=1e-9)


def test_stacked_markets_solve_jointly(quad):
    rng = np.random.default_rng(14)
    ms = [random_market(rng, J=5, F=2, phi=1.0) for _ in range(3)]
    params = ms[0]["params"]
    stacked = solve_prices(
        np.stack([m["mc"] for m in ms]), np.stack([m["delta_bar"] for m in ms]),
        np.stack([m["x"] for m in ms]), params, quad, np.stack([m["H"] for m in ms]),
    )
    for t, m in enumerate(ms):
        single = solve_prices(m["mc"], m["delta_bar"], m["x"], params, quad, m["H"])
        np.testing.assert_allclose(stacked[t], single, atol=1e-11)


def test_price_solver_reports_nonconvergence(quad):
    m = random_market(np.random.default_rng(15), J=4)
    with pytest.raises(ConvergenceError):
        solve_prices(m["mc"], m["delta_bar"], m["x"], m["params"], quad, m["H"], max_iter=2)


# --- nested logit ----------------------------------------------------------------


def _nl_instance(rng, J=8, G=3, sigma=0.4):
    group = rng.integers(0, G, J)
    return NestedLogitParams(sigma, group), rng.normal(-1.0, 0.7, J)


def test_nested_logit_reduces_to_logit():
    rng = np.random.default_rng(16)
    nl, delta = _nl_instance(rng, sigma=0.0)
    np.testing.assert_allclose(nested_logit_shares(delta, nl)[0], logit_shares(delta)[0], rtol=1e-13)


def test_nested_logit_within_group_shares_sum_to_one():
    rng = np.random.default_rng(17)
    nl, delta = _nl_instance(rng)
    _, within, _ = nested_logit_shares(delta, nl)
    for g in np.unique(nl.group):
        assert within[nl.group == g].sum() == pytest.approx(1.0)


def test_nested_logit_share_derivatives_finite_difference():
    rng = np.random.default_rng(18)
    nl, delta = _nl_instance(rng)
    A = nested_logit_share_derivatives(delta, nl)
    h, J = 1e-6, len(delta)
    fd = np.column_stack([
        (nested_logit_shares(delta + h * e, nl)[0] - nested_logit_shares(delta - h * e, nl)[0]) / (2 * h)
        for e in np.eye(J)
    ])
    np.testing.assert_allclose(A, fd, rtol=1e-6, atol=1e-11)


def test_nested_logit_second_derivatives_finite_difference():
    rng = np.random.default_rng(19)
    nl, delta = _nl_instance(rng)
    dA = _nested_logit_dA(delta, nl)
    h, J = 1e-5, len(delta)
    for m, e in enumerate(np.eye(J)):
        fd = (nested_logit_share_derivatives(delta + h * e, nl) - nested_logit_share_derivatives(delta - h * e, nl)) / (2 * h)
        np.testing.assert_allclose(dA[:, :, m], fd, rtol=1e-5, atol=1e-10)


def test_nested_logit_equilibrium_solves_foc():
    rng = np.random.default_rng(20)
    nl, _ = _nl_instance(rng, J=10)
    x, xi = rng.uniform(size=10), rng.normal(0, 0.2, 10)
    firm = np.repeat([0, 1, 2], [4, 3, 3])
    H = build_ownership(firm, ConductSpec(0.5, np.where(firm < 2, 0, firm)))
    p = solve_nested_logit_prices(x, xi, 1.0, (-3.0, 7.0), (1.0, 6.5), nl, H)
    assert np.max(np.abs(nested_logit_foc(p, x, xi, 1.0, (-3.0, 7.0), (1.0, 6.5), nl, H))) < 1e-10


def _resolve_jacobian(x, xi, firm, conduct, nl, h=1e-6):
    """Oracle: re-solve the equilibrium at perturbed attributes."""
    H = build_ownership(firm, conduct)
    cols = []
    for e in np.eye(len(x)):
        up = solve_nested_logit_prices(x + h * e, xi, 1.0, (-3.0, 7.0), (1.0, 6.5), nl, H)
        dn = solve_nested_logit_prices(x - h * e, xi, 1.0, (-3.0, 7.0), (1.0, 6.5), nl, H)
        cols.append((up - dn) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("phi", [0.0, 0.6, 1.0])
def test_nested_logit_price_jacobian_matches_resolve(phi):
    rng = np.random.default_rng(21)
    J = 9
    nl, _ = _nl_instance(rng, J=J, sigma=0.3)
    x, xi = rng.uniform(size=J), rng.normal(0, 0.2, J)
    firm = np.repeat([0, 1, 2], 3)
    conduct = ConductSpec(phi, np.where(firm < 2, 0, firm))
    jac, _ = nested_logit_price_jacobian(x, xi, firm, 1.0, (-3.0, 7.0), (1.0, 6.5), nl, conduct)
    fd = _resolve_jacobian(x, xi, firm, conduct, nl)
    scale = np.max(np.abs(fd))
    np.testing.assert_allclose(jac, fd, rtol=1e-4, atol=1e-4 * scale)


def test_nesting_parameter_validated():
    with pytest.raises(ConfigError):
        NestedLogitParams(1.0, np.zeros(3))
