import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mape_ref, pearson_ref, random_pair, rel_err, rmse_ref
from yieldcast.errors import DomainError, UndefinedCorrelationError
from yieldcast.metrics import (
    EvalResult, RunReport, compare_reports, config_fingerprint, mape, pearson, render_table, rmse,
    scatter_export,
)


def test_worked_values():
    pred, actual = np.array([110.0, 90.0, 200.0]), np.array([100.0, 100.0, 250.0])
    assert mape(pred, actual) == pytest.approx(100 * (0.1 + 0.1 + 0.2) / 3)
    assert rmse(pred, actual) == pytest.approx(np.sqrt((100 + 100 + 2500) / 3))
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_against_brute_force(rng):
    for _ in range(200):
        pred, actual = random_pair(rng)
        assert rel_err(pearson(pred, actual), pearson_ref(pred, actual)) < 1e-10
        assert rel_err(mape(pred, actual), mape_ref(pred, actual)) < 1e-10
        assert rel_err(rmse(pred, actual), rmse_ref(pred, actual)) < 1e-10


@given(a=st.floats(0.01, 100), b=st.floats(-1e4, 1e4), seed=st.integers(0, 10_000))
def test_pearson_affine_invariance(a, b, seed):
    pred, actual = random_pair(np.random.default_rng(seed))
    r = pearson(pred, actual)
    assert pearson(a * pred + b, actual) == pytest.approx(r, abs=1e-9)
    assert pearson(-a * pred + b, actual) == pytest.approx(-r, abs=1e-9)


@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
def test_mape_scale_invariance(c, seed):
    pred, actual = random_pair(np.random.default_rng(seed))
    assert mape(c * pred, c * actual) == pytest.approx(mape(pred, actual), rel=1e-9)
    assert rmse(c * pred, c * actual) == pytest.approx(c * rmse(pred, actual), rel=1e-9)


def test_undefined_cases():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0], [2.0])
    with pytest.raises(DomainError):
        mape([1.0, 2.0], [0.0, 2.0])
    with pytest.raises(DomainError):
        rmse([1.0, 2.0], [1.0])


def _report():
    runs = [EvalResult(0.9, 10.0, 5.0, 4), None, EvalResult(0.8, 20.0, 6.0, 4)]
    return RunReport([0, 1, 2], runs, "abc", "noise", {1: "diverged"}, {"crop": "corn"})


def test_report_aggregates_use_population_std():
    rep = _report()
    assert rep.mean_correlation == pytest.approx(0.85)
    assert rep.std_correlation == pytest.approx(0.05)
    assert rep.std_mape == pytest.approx(5.0)
    assert (rep.max_correlation, rep.min_mape) == (0.9, 10.0)
    agg = rep.aggregates()
    assert agg["completed_runs"] == 2 and agg["failed_runs"] == 1
    single = RunReport([0], [EvalResult(0.7, 3.0, 1.0, 2)])
    assert single.std_correlation == 0.0
    assert np.isnan(RunReport([], []).mean_mape)


def test_report_round_trip(tmp_path):
    rep = _report()
    rep.save(tmp_path / "r.json")
    again = RunReport.load(tmp_path / "r.json")
    assert again.to_json() == rep.to_json()
    assert json.loads(rep.to_json())["runs"][1]["failed"] is True


def test_tables():
    rep = _report()
    mean = render_table({"corn": rep}, "mean").splitlines()
    assert mean[0].split() == ["Crop", "mu_Cor", "sigma_Cor", "mu_MAPE", "sigma_MAPE"]
    assert mean[1].split() == ["corn", "0.850", "0.050", "15.000", "5.000"]
    best = render_table({"corn": rep}, "best").splitlines()
    assert best[1].split() == ["corn", "0.900", "10.000"]
    with pytest.raises(ValueError):
        render_table({"corn": rep}, "median")
    assert "(no noise)" in compare_reports(rep, rep, "corn")


def test_scatter_export(tmp_path):
    path = scatter_export([1.5, 2.5], [1.0, 3.0], [("M1", 2018, "corn"), ("M2", 2018, "corn")],
                          tmp_path / "s.csv")
    assert path.read_text().splitlines() == ["municipality_id,actual_kg_ha,predicted_kg_ha",
                                             "M1,1.0,1.5", "M2,3.0,2.5"]


def test_fingerprint_is_stable():
    assert config_fingerprint({"a": 1, "b": 2}) == config_fingerprint({"b": 2, "a": 1})
    assert config_fingerprint({"a": 1}) != config_fingerprint({"a": 2})
