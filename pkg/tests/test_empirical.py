import json

import numpy as np
import pandas as pd
import pytest

from rvconduct.empirical import (
    EmpiricalSpec,
    SchemaError,
    empirical_ivs,
    estimate_demand,
    hypothesis_groups,
    read_dataset,
    read_hypotheses,
    run_pairwise,
    validate_dataset,
    write_dataset,
)
from rvconduct.fixtures import car_fixture, noodle_fixture


def _tiny():
    return pd.DataFrame({
        "market_id": [1, 1, 2, 2],
        "product_id": [1, 2, 1, 2],
        "firm_id": ["a", "b", "a", "b"],
        "price": [1.0, 2.0, 1.5, 2.5],
        "share": [0.2, 0.3, 0.1, 0.4],
        "x": [0.1, 0.2, 0.3, 0.4],
    })


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.drop(columns="price"), "price"),
    (lambda d: d.assign(product_id=1), "unique"),
    (lambda d: d.assign(price=-1.0), "positive"),
    (lambda d: d.assign(share=0.6), "sum"),
    (lambda d: d.assign(share=0.0), "positive"),
])
def test_schema_violations(mutate, message):
    with pytest.raises(SchemaError, match=message):
        validate_dataset(mutate(_tiny()))


def test_shares_optional_for_testing_but_not_estimation():
    df = _tiny().drop(columns="share")
    validate_dataset(df)
    with pytest.raises(SchemaError, match="share"):
        validate_dataset(df, need_shares=True)


def test_roundtrip_is_lossless(tmp_path):
    rng = np.random.default_rng(60)
    df = _tiny().assign(price=rng.uniform(1, 2, 4) / 3.0, x=rng.normal(size=4) * 1e-7)
    write_dataset(df, tmp_path / "d.csv")
    back = read_dataset(tmp_path / "d.csv")
    for col in ("price", "share", "x"):
        np.testing.assert_array_equal(back[col].to_numpy(), df[col].to_numpy())


def test_hypothesis_validation(tmp_path):
    df = _tiny()
    with pytest.raises(SchemaError, match="'zz'"):
        hypothesis_groups(df, {"h": {"a": "1", "b": "1", "zz": "2"}})
    with pytest.raises(SchemaError, match="'b'"):
        hypothesis_groups(df, {"h": {"a": "1"}})
    path = tmp_path / "h.json"
    path.write_text(json.dumps({"h": {"a": 1, "b": 1}}))
    assert read_hypotheses(path) == {"h": {"a": "1", "b": "1"}}


@pytest.fixture(scope="module")
def noodle():
    return noodle_fixture()


@pytest.fixture(scope="module")
def car():
    return car_fixture()


def test_noodle_instrument_count(noodle):
    g = hypothesis_groups(noodle.data, noodle.hypotheses)["competition"]
    assert empirical_ivs(noodle.data, g, noodle.spec).k == 28


def test_car_instrument_count(car):
    g = hypothesis_groups(car.data, car.hypotheses)["parent"]
    assert empirical_ivs(car.data, g, car.spec).k == 16


def test_noodle_fixture_layout(noodle):
    counts = noodle.data.groupby("firm_id")["product_id"].nunique().to_dict()
    assert counts == {"N": 30, "O": 15, "P": 10, "S": 15}


def test_identical_hypotheses_are_degenerate(noodle):
    hyps = {"competition": noodle.hypotheses["competition"], "copy": noodle.hypotheses["competition"]}
    res = run_pairwise(noodle.data, hyps, noodle.spec)
    assert res.long["degenerate"].all()


def test_estimation_recovers_alpha_on_fixture(noodle):
    spec = EmpiricalSpec(attributes=noodle.spec.attributes)
    fit, table = estimate_demand(noodle.data, spec, "logit")
    assert fit.alpha == pytest.approx(1.0, abs=0.35)
    assert table["parameter"].tolist()[:2] == ["alpha", "beta[const]"]
