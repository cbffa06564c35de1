from __future__ import annotations

import json
import math

import numpy as np
import pytest

from rgbm import io
from rgbm.core import ModelParams, simulate
from rgbm.mixing import BetaCurve, RelaxationFit
from rgbm.mobility import CrossSectionPair, transition_matrix


@pytest.fixture
def params():
    return ModelParams.from_sigma_sq(0.01, mu=0.01, tau=0.02, n_agents=37, seed=2**63 + 5)


def test_params_json_round_trip(tmp_path, params):
    path = io.write_params(tmp_path / "params.json", params)
    assert set(json.loads(path.read_text())) == {"mu", "sigma", "tau", "n_agents", "dt", "seed"}
    assert io.read_params(path) == params


def test_panel_round_trip_is_exact(tmp_path, params):
    panel = simulate(params, 3.0, [0.0, 1.5, 3.0])
    path = io.write_panel(tmp_path / "panel.csv", panel)
    assert path.read_text().splitlines()[0] == "t,agent_id,x"
    assert len(path.read_text().splitlines()) == 1 + 3 * 37
    io.write_params(tmp_path / "params.json", params)
    back = io.read_panel(path)
    np.testing.assert_array_equal(back.records, panel.records)
    np.testing.assert_array_equal(back.times, panel.times)
    assert back.params == params


def test_panel_rejects_bad_files(tmp_path, params):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,id,wealth\n0.0,0,1.0\n")
    with pytest.raises(ValueError):
        io.read_panel(bad, params)
    short = tmp_path / "short.csv"
    short.write_text("t,agent_id,x\n0.0,0,1.0\n")
    with pytest.raises(ValueError, match="missing agents"):
        io.read_panel(short, params)


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=103)
    tm = transition_matrix(CrossSectionPair(x, x + rng.normal(size=103), 1.0), 4)
    csv_path = io.write_matrix_csv(tmp_path / "m.csv", tm)
    header, rows = io.read_csv(csv_path)
    assert header == ["q1", "q2", "q3", "q4"]
    np.testing.assert_array_equal(np.array(rows, dtype=float), tm.a)
    back = io.read_matrix_json(io.write_matrix_json(tmp_path / "m.json", tm))
    assert back.q == 4
    np.testing.assert_array_equal(back.a, tm.a)
    np.testing.assert_array_equal(back.counts, tm.counts)


def test_beta_curve_round_trip(tmp_path):
    curve = BetaCurve(np.array([0.0, 0.1, 0.30000000000000004]), np.array([1.9, 1.0 / 3.0, 0.01]), 100)
    path = io.write_beta_curve(tmp_path / "c.csv", curve)
    assert path.read_text().splitlines()[0] == "t,beta,k"
    back = io.read_beta_curve(path)
    np.testing.assert_array_equal(back.times, curve.times)
    np.testing.assert_array_equal(back.beta, curve.beta)
    assert back.k == 100


def test_fit_json_includes_reference(tmp_path):
    fit = RelaxationFit(0.05, 20.0, (0.0, 30.0), 0.99, 0.01, 45.0, (0.045, 0.055), 100)
    d = json.loads(io.write_fit(tmp_path / "f.json", fit, tau=0.05).read_text())
    assert d["theoretical_relaxation_time"] == pytest.approx(20.0)
    assert d["window"] == [0.0, 30.0] and d["mixing"] is True
    d = json.loads(io.write_fit(tmp_path / "g.json", fit, tau=-0.02).read_text())
    assert "theoretical_relaxation_time" not in d


def test_json_encodes_non_finite(tmp_path):
    d = json.loads(io.write_json(tmp_path / "x.json", {"a": math.inf, "b": [math.nan, 1.0]}).read_text())
    assert float(d["a"]) == math.inf and math.isnan(float(d["b"][0]))


def test_csv_floats_parse_back(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, 123456789.123456789, -0.0]
    path = io.write_csv(tmp_path / "v.csv", ["v"], [[v] for v in vals])
    _, rows = io.read_csv(path)
    assert [float(r[0]) for r in rows] == vals
