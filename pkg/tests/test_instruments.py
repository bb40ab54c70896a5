import numpy as np
import pytest

from rvconduct.instruments import (
    InstrumentMatrix,
    build_ivs,
    differentiation_ivs,
    interaction_ivs,
    iv_set_for_test,
    own_other_ivs,
    product_count_ivs,
    summation_ivs,
)
from rvconduct.model import ConfigError, effective_index


def _random_panel(rng, T=4, J=7, F=3):
    market = np.repeat(np.arange(T), J)
    firm = rng.integers(0, F, T * J)
    x = rng.uniform(size=(T * J, 2))
    return market, firm, x


def _brute_sum(market, group, x, r, scope):
    n = len(market)
    out = np.zeros(n)
    for j in range(n):
        for k in range(n):
            if market[k] != market[j] or k == j:
                continue
            same = group[k] == group[j]
            if (scope == "own" and same) or (scope == "other" and not same):
                out[j] += x[k] ** r
    return out


def _brute_diff(market, group, x, order, scope):
    n = len(market)
    out = np.zeros(n)
    for j in range(n):
        xm = x[market == market[j]]
        sd = np.std(xm, ddof=1)
        for k in range(n):
            if market[k] != market[j] or k == j:
                continue
            same = group[k] == group[j]
            if (scope == "own" and not same) or (scope == "other" and same):
                continue
            d = x[k] - x[j]
            out[j] += {"local": float(abs(d) < sd), "quad": d**2, "cubic": d**3}[order]
    return out


def test_two_product_firm_example():
    z = summation_ivs(np.zeros(2), np.zeros(2), np.array([0.9, 0.4]), orders=(1, 2))
    np.testing.assert_allclose(z.values[0], [0.4, 0.16])
    assert z.labels == ("sum_1_observed", "sum_2_observed")


@pytest.mark.parametrize("scope", ["own", "other"])
def test_summation_matches_double_loop(scope):
    rng = np.random.default_rng(30)
    market, firm, x = _random_panel(rng)
    z = summation_ivs(market, firm, x, (1, 2, 3), scope)
    for r_i, r in enumerate((1, 2, 3)):
        for a in range(2):
            np.testing.assert_allclose(z.values[:, r_i * 2 + a], _brute_sum(market, firm, x[:, a], r, scope), rtol=1e-13)


def test_own_and_other_add_to_all_rivals():
    rng = np.random.default_rng(31)
    market, firm, x = _random_panel(rng)
    own, other = own_other_ivs(market, firm, x[:, 0])
    everyone = summation_ivs(market, np.zeros_like(firm), x[:, 0])
    np.testing.assert_allclose(own.values + other.values, everyone.values, rtol=1e-13)


def test_single_suspected_group_sums_over_all_others():
    rng = np.random.default_rng(32)
    market, firm, x = _random_panel(rng, F=4)
    eff = effective_index(firm, 4, 1)
    z = summation_ivs(market, eff, x[:, 0], (1,), mode="suspected")
    totals = np.bincount(market, weights=x[:, 0])[market]
    np.testing.assert_allclose(z.values[:, 0], totals - x[:, 0], rtol=1e-13)


def test_hand_computed_differentiation_values():
    z = differentiation_ivs(np.zeros(3), np.zeros(3), np.array([0.0, 0.5, 1.0]), ("local", "quad", "cubic"))
    assert z.values[0].tolist() == [0.0, 1.25, 1.125]


def test_identical_products_are_all_nearby():
    z = differentiation_ivs(np.zeros(4), np.zeros(4), np.full(4, 0.3), ("local", "quad", "cubic"))
    np.testing.assert_array_equal(z.values, np.tile([3.0, 0.0, 0.0], (4, 1)))


@pytest.mark.parametrize("scope", ["own", "other"])
def test_differentiation_matches_double_loop(scope):
    rng = np.random.default_rng(33)
    market, firm, x = _random_panel(rng)
    orders = ("local", "quad", "cubic")
    z = differentiation_ivs(market, firm, x[:, 1], orders, scope)
    for o_i, o in enumerate(orders):
        np.testing.assert_allclose(z.values[:, o_i], _brute_diff(market, firm, x[:, 1], o, scope), atol=1e-13)


def test_differentiation_needs_two_products():
    with pytest.raises(ConfigError):
        differentiation_ivs(np.array([0, 1, 1]), np.zeros(3), np.array([0.1, 0.2, 0.3]))


def test_no_collusion_gives_identical_sets():
    rng = np.random.default_rng(34)
    market, firm, x = _random_panel(rng, F=4)
    zc, zk = iv_set_for_test(market, firm, effective_index(firm, 4, 4), x[:, 0], "SumOrder2")
    np.testing.assert_array_equal(zc.values, zk.values)
    assert zc.k == zk.k == 2


@pytest.mark.parametrize("form, k", [("SumOrder2", 2), ("SumOrder3", 3), ("DiffOrder2", 2), ("DiffOrder3", 3)])
def test_form_widths(form, k):
    rng = np.random.default_rng(35)
    market, firm, x = _random_panel(rng)
    assert build_ivs(market, firm, x[:, 0], form).k == k


def test_unknown_form_rejected():
    with pytest.raises(ConfigError):
        build_ivs(np.zeros(2), np.zeros(2), np.ones(2), "SumOrder9")


def test_counts_and_interactions():
    market = np.zeros(5)
    firm = np.array([0, 0, 0, 1, 1])
    cat = np.array(["a", "a", "b", "a", "b"])
    np.testing.assert_array_equal(product_count_ivs(market, firm).values[:, 0], [2, 2, 2, 1, 1])
    x = np.arange(5.0)
    z = interaction_ivs(market, firm, x, [cat], ["seg"])
    np.testing.assert_array_equal(z.values[:, 0], [1, 0, 0, 0, 0])
    assert z.labels == ("sum-seg_1_observed",)


def test_instrument_matrix_validation():
    with pytest.raises(ValueError):
        InstrumentMatrix(np.ones((2, 2)), ("a", "a"))
    with pytest.raises(ValueError):
        InstrumentMatrix(np.array([[np.nan]]), ("a",))
