import json
import logging
from types import SimpleNamespace

import numpy as np
import pytest

import prodnet.shocks as shocks_mod
from prodnet.economy import Elasticities
from prodnet.equilibrium import calibrate, solve_equilibrium
from prodnet.errors import DataError, EquilibriumError
from prodnet.shocks import (business_cycle_experiment,
                            foreign_price_experiment, histogram_export,
                            mvn_sample, psd_factor, severe_tfp_experiment)

from helpers import random_snapshot, toy_elasticities, toy_model


def _model_pair(seed=50, n=3, open_economy=True):
    """Two calibrations of the same snapshot, low vs high theta."""
    rng = np.random.default_rng(seed)
    snap = random_snapshot(rng, n, open_economy=open_economy)
    low = calibrate(snap, toy_elasticities(n, theta=np.full(n, 0.2)),
                    open_economy=open_economy)
    high = calibrate(snap, toy_elasticities(n, theta=np.full(n, 1.8)),
                     open_economy=open_economy)
    return {"low": low, "high": high}


def test_psd_factor_reproduces_covariance():
    rng = np.random.default_rng(80)
    b = rng.normal(0, 1, (4, 4))
    cov = b @ b.T
    factor = psd_factor(cov)
    np.testing.assert_allclose(factor @ factor.T, cov, atol=1e-12)
    assert np.allclose(factor, np.tril(factor))


def test_psd_factor_clips_tiny_negative_eigenvalues():
    v = np.array([1.0, -0.5, 0.25])
    cov = np.outer(v, v)
    cov -= 1e-13 * np.eye(3)  # numerically indefinite, within tolerance
    factor = psd_factor(cov)
    np.testing.assert_allclose(factor @ factor.T, np.outer(v, v), atol=1e-10)


def test_psd_factor_rejects_indefinite():
    cov = np.diag([1.0, -0.5])
    with pytest.raises(DataError, match="indefinite"):
        psd_factor(cov)


def test_psd_factor_zero_matrix():
    factor = psd_factor(np.zeros((3, 3)))
    np.testing.assert_allclose(factor @ factor.T, 0.0, atol=1e-15)


def test_psd_factor_rejects_nonsquare():
    with pytest.raises(DataError, match="square"):
        psd_factor(np.zeros((2, 3)))


def test_mvn_sample_zero_covariance_is_zero():
    draws = mvn_sample(np.zeros((3, 3)), 50, seed=1)
    assert draws.shape == (50, 3)
    assert (draws == 0.0).all()


def test_mvn_sample_variance():
    draws = mvn_sample(np.array([[4.0]]), 100_000, seed=2)
    assert draws.mean() == pytest.approx(0.0, abs=0.05)
    assert draws.var() == pytest.approx(4.0, rel=0.03)


def test_mvn_sample_rank_one_support():
    v = np.array([2.0, -1.0, 0.5])
    draws = mvn_sample(np.outer(v, v), 200, seed=3)
    # every draw is a scalar multiple of v
    scale = draws[:, 0] / v[0]
    np.testing.assert_allclose(draws, scale[:, None] * v[None, :],
                               atol=1e-12)


def test_mvn_sample_draws_keyed_by_index():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    short = mvn_sample(cov, 10, seed=4)
    long = mvn_sample(cov, 25, seed=4)
    np.testing.assert_array_equal(short, long[:10])
    again = mvn_sample(cov, 10, seed=4)
    np.testing.assert_array_equal(short, again)


def test_mvn_sample_covariance_accuracy():
    cov = np.array([[1.0, -0.6], [-0.6, 0.9]])
    draws = mvn_sample(cov, 200_000, seed=5)
    sample_cov = np.cov(draws.T)
    np.testing.assert_allclose(sample_cov, cov, atol=0.02)


def test_foreign_price_zero_magnitude_gives_zero_response():
    models = _model_pair(seed=51, n=3, open_economy=True)
    report = foreign_price_experiment(models, magnitude=0.0)
    assert report.kind == "foreign_price"
    assert report.scenarios == report.sectors  # all sectors import here
    for name in models:
        np.testing.assert_allclose(report.tables[f"price_pct/{name}"], 0.0,
                                   atol=1e-10)
        np.testing.assert_allclose(report.tables[f"gdp_pct/{name}"], 0.0,
                                   atol=1e-10)
    assert report.failures == ()


def test_foreign_price_closed_economy_warns_and_has_no_scenarios(caplog):
    models = _model_pair(seed=52, n=3, open_economy=False)
    with caplog.at_level(logging.WARNING, logger="prodnet.shocks"):
        report = foreign_price_experiment(models)
    assert "closed calibrations" in caplog.text
    assert report.scenarios == ()
    assert report.tables["price_pct/low"].shape == (0, 3)


def test_foreign_price_summary_and_calibration_gap():
    models = _model_pair(seed=53, n=4, open_economy=True)
    report = foreign_price_experiment(models, magnitude=0.25, top_k=2)
    summary = report.summary
    assert summary["magnitude"] == 0.25
    top = summary["top_responders"]["low"]
    for code, entries in top.items():
        assert len(entries) == 2
        row = report.tables["price_pct/low"][report.scenarios.index(code)]
        best = report.sectors[int(np.argmax(np.abs(row)))]
        assert entries[0]["sector"] == best
    gaps = summary["max_abs_price_diff_vs_low"]["high"]
    for code, gap in gaps.items():
        r = report.scenarios.index(code)
        delta = (report.tables["price_pct/low"][r]
                 - report.tables["price_pct/high"][r])
        assert gap == pytest.approx(float(np.abs(delta).max()), rel=1e-12)


def test_foreign_price_solver_failure_yields_nan_rows(monkeypatch, caplog):
    models = _model_pair(seed=54, n=3, open_economy=True)
    real = solve_equilibrium

    def flaky(model, shock=None, **kwargs):
        if shock is not None and shock.Ptilde[1] != 1.0:
            raise EquilibriumError("no convergence", residual=1.0)
        return real(model, shock, **kwargs)

    monkeypatch.setattr(shocks_mod, "solve_equilibrium", flaky)
    with caplog.at_level(logging.WARNING, logger="prodnet.shocks"):
        report = foreign_price_experiment(models, magnitude=0.1)
    code = report.sectors[1]
    assert set(report.failures) == {f"low/{code}", f"high/{code}"}
    r = report.scenarios.index(code)
    for name in models:
        assert np.isnan(report.tables[f"price_pct/{name}"][r]).all()
        assert np.isnan(report.tables[f"gdp_pct/{name}"][r])
        ok = [s for s in range(3) if s != r]
        assert np.isfinite(report.tables[f"price_pct/{name}"][ok]).all()
    assert report.summary["top_responders"]["low"][code] == []


def test_experiments_reject_mismatched_economies():
    a = toy_model(seed=55, n=3)
    b = toy_model(seed=56, n=4)
    with pytest.raises(DataError, match="different economy"):
        severe_tfp_experiment({"a": a, "b": b})
    with pytest.raises(DataError, match="no calibrations"):
        foreign_price_experiment({})


def test_severe_tfp_zero_magnitude_is_exactly_zero():
    models = _model_pair(seed=57, n=3)
    report = severe_tfp_experiment(models, magnitude=0.0)
    for name in models:
        np.testing.assert_array_equal(report.tables[f"gdp_pct/{name}"],
                                      np.zeros(3))


def test_severe_tfp_rejects_total_destruction():
    models = _model_pair(seed=58, n=2)
    with pytest.raises(DataError, match="exceed -1"):
        severe_tfp_experiment(models, magnitude=-1.0)


def test_severe_tfp_cobb_douglas_matches_sales_share_rule():
    # sigma = theta = nu = 1, closed: dlogGDP = lambda_k dlogZ_k exactly
    rng = np.random.default_rng(81)
    snap = random_snapshot(rng, 4, open_economy=False)
    m = calibrate(snap, Elasticities(sigma=1.0, theta=np.ones(4), xi=1.4,
                                     nu=1.0, xi_export=1.4),
                  open_economy=False)
    lam = solve_equilibrium(m).lam
    magnitude = -0.3
    report = severe_tfp_experiment({"cd": m}, magnitude=magnitude)
    want = 100.0 * lam * np.log1p(magnitude)
    np.testing.assert_allclose(report.tables["gdp_pct/cd"], want, rtol=1e-8)


def test_severe_tfp_ranked_differences_sorted():
    models = _model_pair(seed=59, n=4)
    report = severe_tfp_experiment(models, magnitude=-0.25)
    ranked = report.summary["ranked_differences"]
    gaps = [abs(entry["gap_pct"]) for entry in ranked]
    assert gaps == sorted(gaps, reverse=True)
    assert {entry["sector"] for entry in ranked} == set(report.sectors)
    delta = (report.tables["gdp_pct/low"] - report.tables["gdp_pct/high"])
    k = report.sectors.index(ranked[0]["sector"])
    assert ranked[0]["gap_pct"] == pytest.approx(delta[k], rel=1e-12)


def test_business_cycle_zero_covariance():
    models = _model_pair(seed=60, n=3)
    report = business_cycle_experiment(models, np.zeros((3, 3)), n_draws=8,
                                       seed=7)
    for name in models:
        np.testing.assert_allclose(report.tables[f"gdp_pct/{name}"], 0.0,
                                   atol=1e-10)
        stats = report.summary["gdp_stats"][name]
        assert stats["mean"] == pytest.approx(0.0, abs=1e-10)
        assert stats["sd"] == pytest.approx(0.0, abs=1e-10)
        assert stats["skewness"] == pytest.approx(0.0, abs=1e-10)
    assert len(report.scenarios) == 8
    assert report.summary["n_dropped"] == 0


def test_business_cycle_worker_count_does_not_change_results():
    models = _model_pair(seed=61, n=3)
    cov = 0.02 * np.eye(3)
    reports = [business_cycle_experiment(models, cov, n_draws=12, seed=9,
                                         n_workers=w) for w in (1, 4, 8)]
    for other in reports[1:]:
        assert other.scenarios == reports[0].scenarios
        for key in reports[0].tables:
            np.testing.assert_array_equal(other.tables[key],
                                          reports[0].tables[key])
        assert other.summary == reports[0].summary


def test_business_cycle_cobb_douglas_per_draw_oracle():
    rng = np.random.default_rng(82)
    snap = random_snapshot(rng, 3, open_economy=False)
    m = calibrate(snap, Elasticities(sigma=1.0, theta=np.ones(3), xi=1.4,
                                     nu=1.0, xi_export=1.4),
                  open_economy=False)
    lam = solve_equilibrium(m).lam
    cov = 0.03 * np.eye(3)
    n_draws, seed = 20, 11
    report = business_cycle_experiment({"cd": m}, cov, n_draws=n_draws,
                                       seed=seed)
    draws = mvn_sample(cov, n_draws, seed)
    want = 100.0 * draws @ lam
    np.testing.assert_allclose(report.tables["gdp_pct/cd"], want, rtol=1e-8)


def test_business_cycle_drops_failed_draws_everywhere(monkeypatch, caplog):
    models = _model_pair(seed=62, n=3)
    cov = 0.02 * np.eye(3)
    n_draws, seed = 10, 13
    draws = mvn_sample(cov, n_draws, seed)
    bad = {k for k in range(n_draws) if draws[k, 0] > 0.0}
    assert 0 < len(bad) < n_draws
    real = solve_equilibrium
    high = models["high"]

    def flaky(model, shock=None, **kwargs):
        if model is high and shock is not None and shock.Z[0] > 1.0:
            raise EquilibriumError("no convergence", residual=1.0)
        return real(model, shock, **kwargs)

    monkeypatch.setattr(shocks_mod, "solve_equilibrium", flaky)
    with caplog.at_level(logging.WARNING, logger="prodnet.shocks"):
        report = business_cycle_experiment(models, cov, n_draws=n_draws,
                                           seed=seed)
    assert "dropped" in caplog.text
    assert report.summary["n_dropped"] == len(bad)
    assert report.failures == tuple(f"draw{k:05d}" for k in sorted(bad))
    kept = tuple(f"draw{k:05d}" for k in range(n_draws) if k not in bad)
    assert report.scenarios == kept
    # identical draws survive in both calibrations
    for name in models:
        assert report.tables[f"gdp_pct/{name}"].shape == (len(kept),)
        assert np.isfinite(report.tables[f"gdp_pct/{name}"]).all()


def test_business_cycle_accepts_covariance_carrier_and_checks_shape():
    models = _model_pair(seed=63, n=3)
    carrier = SimpleNamespace(cov=0.01 * np.eye(3))
    report = business_cycle_experiment(models, carrier, n_draws=3, seed=1)
    assert report.summary["n_dropped"] == 0
    with pytest.raises(DataError, match="does not match"):
        business_cycle_experiment(models, np.zeros((2, 2)), n_draws=3, seed=1)


def test_report_writers_are_deterministic(tmp_path):
    models = _model_pair(seed=64, n=3)
    report = severe_tfp_experiment(models, magnitude=-0.2)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    report.write_csv(a, header_comment="units: 100*dlog")
    report.write_csv(b, header_comment="units: 100*dlog")
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text().splitlines()
    assert text[0] == "# units: 100*dlog"
    assert text[1] == "table,scenario,sector,value"

    ja, jb = tmp_path / "a.json", tmp_path / "b.json"
    report.write_json(ja)
    report.write_json(jb)
    assert ja.read_bytes() == jb.read_bytes()
    payload = json.loads(ja.read_text())
    assert payload["kind"] == "severe_tfp"
    assert payload["calibrations"] == ["low", "high"]


def test_report_json_uses_null_for_failed_scenarios(monkeypatch, tmp_path):
    models = _model_pair(seed=65, n=3, open_economy=True)

    def always_fail(model, shock=None, **kwargs):
        raise EquilibriumError("no convergence", residual=1.0)

    monkeypatch.setattr(shocks_mod, "solve_equilibrium", always_fail)
    report = severe_tfp_experiment(models, magnitude=-0.1)
    path = tmp_path / "r.json"
    report.write_json(path)
    payload = json.loads(path.read_text())
    assert payload["summary"]["gdp_pct"]["low"] == [None, None, None]
    assert len(payload["failures"]) == 6


def test_histogram_export_counts_and_edges():
    values = np.concatenate([np.zeros(5), np.ones(5), [np.nan]])
    out = histogram_export(values, n_bins=4)
    assert len(out["bin_edges"]) == 5
    assert sum(out["counts"]) == 10
    assert out["counts"][0] == 5 and out["counts"][-1] == 5
    assert histogram_export(np.array([np.nan])) == {"bin_edges": [],
                                                    "counts": []}
