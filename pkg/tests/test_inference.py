import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gecm_hem.data import Standardizer, TrueModel, generate_scenario, scenario_config, standardize
from gecm_hem.ecm import HyperParams
from gecm_hem.exceptions import DataError
from gecm_hem.gibbs import GibbsDraws, run_gibbs
from gecm_hem.inference import (EvalReport, PosteriorSummary, PredictionResult,
                                five_number_summary, metrics, predict, predict_mode,
                                predictive_draws, selection_rates, summarize)


def make_draws(gamma, beta, rho2=None, eta=None):
    gamma = np.asarray(gamma, dtype=bool)
    beta = np.asarray(beta, dtype=float)
    t = gamma.shape[0]
    return GibbsDraws(
        iteration=np.arange(1, t + 1), gamma=gamma, beta=beta,
        rho2=np.ones(t) if rho2 is None else np.asarray(rho2, dtype=float),
        tau2=np.ones(t), theta=np.full(t, 0.5),
        eta=np.ones(t) if eta is None else np.asarray(eta, dtype=float),
    )


def unit_standardizer(p, y_mean=0.0, y_sd=1.0):
    return Standardizer(y_mean, y_sd, np.zeros(p), np.ones(p))


# ---------------------------------------------------------------------------
# summaries


def test_zero_mean_covariates_give_ybar_intercept():
    rng = np.random.default_rng(1)
    beta = rng.normal(size=(50, 3))
    s = Standardizer(4.25, 2.0, np.zeros(3), np.array([1.0, 2.0, 0.5]))
    out = summarize(make_draws(beta != 0, beta), [0, 1, 2], s)
    assert out.beta0_median == 4.25


def test_inclusion_threshold_example():
    t = 10000
    gamma = np.zeros((t, 1), bool)
    gamma[:5001] = True
    beta = np.where(gamma, 1.0, 0.0)
    out = summarize(make_draws(gamma, beta), [0], unit_standardizer(1))
    assert out.inclusion_prob[0] == pytest.approx(0.5001, abs=1e-15)
    assert out.mpm_selected[0]
    gamma[5000] = False
    out = summarize(make_draws(gamma, np.where(gamma, 1.0, 0.0)), [0], unit_standardizer(1))
    assert out.mpm_selected[0]  # exactly 0.5 is still selected
    gamma[4999] = False
    out = summarize(make_draws(gamma, np.where(gamma, 1.0, 0.0)), [0], unit_standardizer(1))
    assert not out.mpm_selected[0]


def test_single_draw_and_reduced_mapping():
    s = Standardizer(1.0, 3.0, np.array([1.0, 2.0, 3.0, 4.0]), np.array([1.0, 2.0, 3.0, 6.0]))
    d = make_draws([[True, True]], [[0.5, -2.0]], eta=[0.7])
    out = summarize(d, [1, 3], s, eta_grid=(0.7, 1.0))
    np.testing.assert_allclose(out.beta_median, [0.0, 0.75, 0.0, -1.0])
    assert out.beta0_median == pytest.approx(1.0 - 0.75 * 2.0 + 1.0 * 4.0)
    np.testing.assert_array_equal(out.inclusion_prob, [0, 1, 0, 1])
    assert out.eta_posterior == {0.7: 1.0, 1.0: 0.0}
    assert out.column_names == ("x1", "x2", "x3", "x4")


def test_empty_chain_rejected():
    with pytest.raises(ValueError):
        summarize(make_draws(np.zeros((0, 2), bool), np.zeros((0, 2))), [0, 1],
                  unit_standardizer(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_summary_invariants(t, p, seed):
    rng = np.random.default_rng(seed)
    gamma = rng.random((t, p)) < 0.4
    beta = np.where(gamma, rng.normal(size=(t, p)), 0.0)
    eta = rng.choice(HyperParams().eta_grid, t)
    out = summarize(make_draws(gamma, beta, eta=eta), np.arange(p), unit_standardizer(p),
                    eta_grid=HyperParams().eta_grid)
    np.testing.assert_array_equal(out.mpm_selected, out.inclusion_prob >= 0.5)
    assert sum(out.eta_posterior.values()) == pytest.approx(1.0, abs=1e-12)
    assert np.all((out.inclusion_prob >= 0) & (out.inclusion_prob <= 1))


def test_summary_csv_round_trip(tmp_path):
    s = Standardizer(1.0, 3.0, np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    out = summarize(make_draws([[True, False], [True, True]], [[0.5, 0], [0.25, 1]]), [0, 1], s,
                    column_names=("a", "b"))
    path = tmp_path / "summary.csv"
    out.write(path)
    back = PosteriorSummary.read(path)
    np.testing.assert_array_equal(back.beta_median, out.beta_median)
    np.testing.assert_array_equal(back.mpm_selected, out.mpm_selected)
    assert back.beta0_median == out.beta0_median and back.column_names == ("a", "b")


# ---------------------------------------------------------------------------
# prediction


def test_vanishing_noise_collapses_interval():
    s = Standardizer(2.0, 1.5, np.array([0.5]), np.array([2.0]))
    d = make_draws([[True]], [[0.8]], rho2=[1e-12])
    x_new = np.array([[0.0], [1.0], [3.0]])
    res = predict(d, [0], s, x_new, rng=np.random.default_rng(2))
    expected = 2.0 + 0.8 * 1.5 / 2.0 * (x_new[:, 0] - 0.5)
    np.testing.assert_allclose(res.point, expected, rtol=1e-12)
    assert np.all(res.upper - res.lower < 1e-4)
    np.testing.assert_allclose(predict_mode(np.array([0.8]), s, x_new), expected, rtol=1e-12)


def test_level_quantiles_and_nesting():
    rng = np.random.default_rng(3)
    t = 400
    d = make_draws(np.ones((t, 2), bool), rng.normal(1, 0.1, (t, 2)),
                   rho2=rng.uniform(0.5, 1.5, t), eta=rng.choice([0.5, 1.0, 2.0], t))
    s = Standardizer(1.0, 2.0, np.zeros(2), np.ones(2))
    x_new = rng.normal(size=(7, 2))
    res90 = predict(d, [0, 1], s, x_new, level=0.90, rng=np.random.default_rng(4))
    mu, ystar = predictive_draws(d, [0, 1], s, x_new, np.random.default_rng(4))
    srt = np.sort(ystar, axis=0)
    for q, got in ((0.05, res90.lower), (0.95, res90.upper)):
        h = (t - 1) * q
        k = int(math.floor(h))
        manual = srt[k] + (h - k) * (srt[k + 1] - srt[k])
        np.testing.assert_allclose(got, manual, rtol=1e-13)
    np.testing.assert_array_equal(res90.point, np.median(mu, axis=0))
    res95 = predict(d, [0, 1], s, x_new, level=0.95, rng=np.random.default_rng(4))
    res50 = predict(d, [0, 1], s, x_new, level=0.50, rng=np.random.default_rng(4))
    assert np.all(res95.lower <= res90.lower) and np.all(res95.upper >= res90.upper)
    assert np.all(res50.lower >= res90.lower) and np.all(res50.upper <= res90.upper)
    for r in (res50, res90, res95):
        assert np.all(r.lower <= r.point) and np.all(r.point <= r.upper)


def test_chunking_does_not_change_predictions():
    rng = np.random.default_rng(5)
    d = make_draws(np.ones((30, 1), bool), rng.normal(size=(30, 1)))
    s = unit_standardizer(1)
    x_new = rng.normal(size=(9, 1))
    a = predict(d, [0], s, x_new, rng=np.random.default_rng(6), chunk=200)
    b = predict(d, [0], s, x_new, rng=np.random.default_rng(6), chunk=200)
    np.testing.assert_array_equal(a.upper, b.upper)


def test_prediction_errors():
    d = make_draws([[True]], [[1.0]])
    s = unit_standardizer(1)
    with pytest.raises(DataError):
        predict(d, [0], s, np.ones((3, 2)), rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        predict(d, [0], s, np.ones((3, 1)), level=1.0)


def test_prediction_csv_round_trip(tmp_path):
    r = PredictionResult(np.array([1.0, 2.0]), np.array([0.5, 1.0]), np.array([1.5, 3.0]))
    r.write(tmp_path / "p.csv")
    back = PredictionResult.read(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.upper, r.upper)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "point,lower,upper"


@pytest.fixture(scope="module")
def toy_fit():
    cfg = scenario_config("I", n=300, p=5, n_signals=2, seed=11)
    d, truth = generate_scenario(cfg)
    test, _ = generate_scenario(cfg, n=1000, stream="simulate_test")
    ds, s = standardize(d)
    draws = run_gibbs(ds.x, ds.y, HyperParams(), n_iter=3000, burnin=500, seed=12)
    return d, truth, test, s, draws


def test_calibration_on_strong_signal(toy_fit):
    d, truth, test, s, draws = toy_fit
    res = predict(draws, np.arange(5), s, test.x, rng=np.random.default_rng(13))
    coverage = np.mean((test.y >= res.lower) & (test.y <= res.upper))
    assert 0.85 <= coverage <= 0.95


def test_intercept_recovery(toy_fit):
    d, truth, test, s, draws = toy_fit
    summ = summarize(draws, np.arange(5), s)
    resid = d.y - d.x @ truth.beta - truth.beta0
    assert abs(summ.beta0_median - truth.beta0) < 4 * resid.std(ddof=1) / math.sqrt(d.n)
    np.testing.assert_array_equal(summ.mpm_selected, truth.gamma_true)


# ---------------------------------------------------------------------------
# metrics


def test_selection_rates_example():
    assert selection_rates([1, 1, 0, 0], [1, 0, 0, 1]) == (0.5, 0.5)
    assert selection_rates([0, 0], [1, 0]) == (None, 0.5)
    assert selection_rates([1, 1], [1, 0]) == (0.5, None)


def test_all_ones_selection():
    gamma = np.zeros(1000, bool)
    gamma[:100] = True
    tpr, tnr = selection_rates(gamma, np.ones(1000, bool))
    assert tpr == 1.0 and tnr == 0.0


def test_exact_estimate_has_zero_rmse():
    truth = TrueModel(2.0, np.array([1.5, 0.0, -1.0]))
    summ = PosteriorSummary(truth.beta.copy(), 2.0, np.array([1.0, 0.0, 1.0]), {},
                            np.array([True, False, True]))
    rep = metrics(truth, summ, np.random.default_rng(0).normal(size=(10, 3)))
    assert rep.rmse_beta == 0.0 and rep.rmse_mean_response == 0.0
    assert (rep.tpr, rep.tnr) == (1.0, 1.0)
    assert rep.mead is None and rep.coverage is None


def test_metric_formulas():
    truth = TrueModel(1.0, np.array([2.0, 0.0]))
    summ = PosteriorSummary(np.array([1.0, 0.5]), 0.0, np.array([1.0, 1.0]), {},
                            np.array([True, True]))
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    pred = PredictionResult(np.array([0.0, 1.0]), np.array([-1.0, 1.5]), np.array([1.0, 2.0]))
    rep = metrics(truth, summ, x, pred, np.array([0.5, 4.0]))
    assert rep.rmse_beta == pytest.approx(math.sqrt((1 + 1 + 0.25) / 3))
    # per-row mean differences: 1 + 1 = 2 and 1 - 1 = 0
    assert rep.rmse_mean_response == pytest.approx(math.sqrt(2.0))
    assert rep.mead == pytest.approx(1.75)
    assert rep.coverage == 0.5 and rep.median_width == pytest.approx(1.25)
    with pytest.raises(DataError):
        metrics(truth, summ, x, pred, np.array([1.0]))


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(14)
    p, t = 6, 80
    gamma = rng.random((t, p)) < 0.5
    beta = np.where(gamma, rng.normal(size=(t, p)), 0.0)
    s = Standardizer(1.0, 2.0, rng.normal(size=p), rng.uniform(0.5, 2, p))
    truth = TrueModel(1.0, np.array([1.0, 0, 0, -2, 0, 0.5]))
    x = rng.normal(size=(20, p))
    base = metrics(truth, summarize(make_draws(gamma, beta), np.arange(p), s), x)
    for _ in range(5):
        perm = rng.permutation(p)
        sp = Standardizer(1.0, 2.0, s.x_means[perm], s.x_sds[perm])
        out = metrics(TrueModel(1.0, truth.beta[perm]),
                      summarize(make_draws(gamma[:, perm], beta[:, perm]), np.arange(p), sp),
                      x[:, perm])
        assert out.rmse_beta == pytest.approx(base.rmse_beta, rel=1e-12)
        assert out.rmse_mean_response == pytest.approx(base.rmse_mean_response, rel=1e-12)
        assert (out.tpr, out.tnr) == (base.tpr, base.tnr)


def test_report_text_round_trip():
    rep = EvalReport(0.1, 0.2, 1.0, 0.99, 1.3, None, 4.5)
    text = rep.to_text()
    assert "coverage = NA" in text
    assert EvalReport.from_text(text) == rep


def test_five_number_summary():
    reps = [EvalReport(tpr=v, tnr=None) for v in (0.0, 0.25, 0.5, 0.75, 1.0)]
    table = five_number_summary(reps)
    assert table["tpr"] == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert "tnr" not in table
