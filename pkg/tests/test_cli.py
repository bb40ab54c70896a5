import json

import numpy as np
import pandas as pd
import pytest

from rvconduct.cli import expand_grid, main
from rvconduct.conduct import t_iv_rv
from rvconduct.empirical import write_dataset
from rvconduct.instruments import iv_set_for_test
from rvconduct.model import MonteCarloConfig
from rvconduct.simulate import generate_panel

SIM = MonteCarloConfig(J=36, F=6, T=100, phi=1.0, F_c=2, S=1, master_seed=3)


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    panel = generate_panel(SIM, 0)
    write_dataset(panel.to_frame(), path)
    return path, panel


def test_grid_expansion():
    cells = expand_grid({"base": {"J": 36}, "grid": {"phi": [0, 1], "F_c": [1, 2, 3]}})
    assert len(cells) == 6 and cells[0] == {"J": 36, "phi": 0, "F_c": 1}


def test_simulate_same_seed_identical(tmp_path):
    cfg = {"base": {"J": 12, "F": 4, "T": 5, "F_c": 3, "S": 2, "master_seed": 0},
           "grid": {"phi": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    for name in ("a.csv", "b.csv"):
        assert main(["simulate", str(tmp_path / "c.json"), "--seed", "5", "-o", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.csv").read_text()
    assert a == (tmp_path / "b.csv").read_text()
    frame = pd.read_csv(tmp_path / "a.csv")
    assert len(frame) == 11 and (frame["master_seed"] == 5).all()


def test_simulate_missing_field(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"J": 12, "F": 4, "T": 5, "F_c": 3, "phi": 0, "master_seed": 0}))
    assert main(["simulate", str(tmp_path / "c.json")]) == 2
    assert "'S'" in capsys.readouterr().err


def test_simulate_malformed_json_reports_position(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"J": 12,\n "F": }')
    assert main(["simulate", str(tmp_path / "c.json")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_usage_exits_2(capsys):
    assert main(["frobnicate"]) == 2


def test_cli_test_matches_in_process_bitwise(exported, tmp_path):
    path, panel = exported
    out = tmp_path / "m.csv"
    assert main(["test", str(path), "--attributes", "x", "--iv-form", "SumOrder2", "-o", str(out)]) == 0
    matrix = pd.read_csv(out, index_col=0, float_precision="round_trip")
    x = panel.x.ravel()
    zc, zk = iv_set_for_test(panel.market, panel.firm_flat, panel.effective_flat, x, "SumOrder2")
    direct = t_iv_rv(panel.price.ravel(), np.column_stack([np.ones_like(x), x]), zc, zk).t_stat
    assert matrix.loc["suspected", "observed"] == direct
    assert matrix.loc["observed", "suspected"] == -direct
    long = pd.read_csv(tmp_path / "m_long.csv")
    assert list(long.columns) == ["row", "col", "t", "p_collusion", "p_competition", "degenerate"]


def test_cli_test_with_hypothesis_file(exported, tmp_path):
    path, _ = exported
    hyp = {"one": {str(f): str(f) for f in range(6)}, "two": {str(f): str(f) for f in range(6)}}
    (tmp_path / "h.json").write_text(json.dumps(hyp))
    out = tmp_path / "m.csv"
    assert main(["test", str(path), "--attributes", "x", "--hypotheses", str(tmp_path / "h.json"), "-o", str(out)]) == 0
    assert pd.read_csv(tmp_path / "m_long.csv")["degenerate"].all()


def test_cli_test_unknown_firm(exported, tmp_path, capsys):
    path, _ = exported
    hyp = {"h": {**{str(f): "g" for f in range(6)}, "ghost": "g"}}
    (tmp_path / "h.json").write_text(json.dumps(hyp))
    assert main(["test", str(path), "--attributes", "x", "--hypotheses", str(tmp_path / "h.json")]) == 2
    assert "ghost" in capsys.readouterr().err


def test_cli_estimate_logit_and_rc(exported, tmp_path):
    path, _ = exported
    assert main(["estimate", str(path), "--attributes", "x", "--iv-form", "SumOrder2", "-o", str(tmp_path / "l.csv")]) == 0
    logit = pd.read_csv(tmp_path / "l.csv")
    assert logit.set_index("parameter").loc["alpha", "estimate"] == pytest.approx(1.0, abs=0.3)
    assert main(["estimate", str(path), "--attributes", "x", "--iv-form", "SumOrder2", "--model", "rc",
                 "-o", str(tmp_path / "r.csv")]) in (0, 1)
    assert len(pd.read_csv(tmp_path / "r.csv")) == len(logit) + 1


def test_cli_estimate_needs_shares(exported, tmp_path, capsys):
    path, _ = exported
    df = pd.read_csv(path).drop(columns="share")
    df.to_csv(tmp_path / "noshare.csv", index=False)
    assert main(["estimate", str(tmp_path / "noshare.csv"), "--attributes", "x"]) == 2
    assert "conduct test does not" in capsys.readouterr().err


def test_cli_estimate_rejects_share_sum(exported, tmp_path):
    path, _ = exported
    df = pd.read_csv(path)
    df["share"] = 0.5
    df.to_csv(tmp_path / "bad.csv", index=False)
    assert main(["estimate", str(tmp_path / "bad.csv"), "--attributes", "x"]) == 2


def test_cli_jacobian_defaults(tmp_path, capsys):
    assert main(["jacobian", "-o", str(tmp_path)]) == 0
    files = sorted(tmp_path.glob("jacobian_phi_*.csv"))
    assert len(files) == 5
    frame = pd.read_csv(files[0])
    assert frame.shape == (60, 63) and list(frame.columns[:3]) == ["product", "firm", "group"]


def test_cli_jacobian_bad_nesting(tmp_path):
    (tmp_path / "nl.json").write_text(json.dumps({"sigma_nest": 1.2}))
    assert main(["jacobian", str(tmp_path / "nl.json"), "-o", str(tmp_path)]) == 2
