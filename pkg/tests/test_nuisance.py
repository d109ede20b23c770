import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import norm

from landmark_dl.data import Dataset
from landmark_dl.nuisance import (FitContext, FitError, HazardFit, NuisanceWarning, SeparationError,
                                  SurvivalFormError, cumhaz_increments, cv_select, fit_bundle,
                                  fit_hazard, fit_missingness, fit_outcome, fit_propensity,
                                  get_learner, predict_survival, register_learner)
from landmark_dl.simulate import SCENARIO_3, calibrated, make_rng, sample_scenario

from conftest import discrete_dataset

sm = pytest.importorskip("statsmodels.api")
from statsmodels.duration.hazard_regression import PHReg  # noqa: E402


def km_oracle(time, status, u, deaths_first_for_censoring=False):
    """Textbook product-limit loop."""
    s = 1.0
    for tj in sorted(set(time[status == 1])):
        if tj > u:
            break
        d = np.sum((time == tj) & (status == 1))
        if deaths_first_for_censoring:
            # censoring process: subjects dying at tj have left the risk set
            r = np.sum(time > tj) + np.sum((time == tj) & (status == 1))
        else:
            r = np.sum(time >= tj)
        s *= 1 - d / r
    return s


def _rounded_data(rng, n=400):
    # coarse times create many ties
    time = np.round(rng.exponential(2.0, n), 1)
    status = (rng.random(n) < 0.7).astype(int)
    A = (rng.random(n) < 0.5).astype(int)
    L = rng.normal(size=(n, 2))
    return Dataset.from_arrays(time, status, A, L)


def test_covariate_free_fit_is_kaplan_meier(rng):
    ds = _rounded_data(rng)
    fit = fit_hazard(ds, "event", None, True)
    for a in (0, 1):
        arm = ds.treatment == a
        for u in np.linspace(0, ds.time.max(), 57):
            assert abs(predict_survival(fit, u, a, []) - km_oracle(ds.time[arm], ds.status[arm], u)) <= 1e-12


def test_censoring_fit_is_reverse_kaplan_meier_deaths_first(rng):
    ds = _rounded_data(rng)
    fit = fit_hazard(ds, "censoring", None, True)
    for a in (0, 1):
        arm = ds.treatment == a
        for u in np.linspace(0, ds.time.max(), 57):
            want = km_oracle(ds.time[arm], 1 - ds.status[arm], u)
            # reverse KM where a death at s is out of the censoring risk set at s
            tt, cc = ds.time[arm], 1 - ds.status[arm]
            s = 1.0
            for tj in sorted(set(tt[cc == 1])):
                if tj > u:
                    break
                d = np.sum((tt == tj) & (cc == 1))
                r = np.sum(tt > tj) + d
                s *= 1 - d / r
            assert abs(predict_survival(fit, u, a, []) - s) <= 1e-12
            del want


def test_hand_product_limit():
    ds = Dataset.from_arrays([1.0, 2.0, 3.0], [1, 1, 1], [0, 0, 0])
    fit = fit_hazard(ds, "event", None, True)
    assert predict_survival(fit, 2.5, 0, []) == pytest.approx(1 / 3, abs=1e-15)
    assert predict_survival(fit, 0.0, 0, []) == 1.0


def test_survival_monotone(rng, sim1):
    fit = fit_hazard(sim1, "event", "all", True)
    r = np.sort(rng.uniform(0, sim1.time.max(), 100))
    for a in (0, 1):
        s = [predict_survival(fit, x, a, sim1.covariates[3]) for x in r]
        assert np.all(np.diff(s) <= 0)
        assert all(0 < v <= 1 for v in s)


def test_breslow_single_censoring():
    ds = Dataset.from_arrays([1.0, 2.0], [0, 1], [0, 0])
    fit = fit_hazard(ds, "censoring", None, True)
    assert cumhaz_increments(fit, 0, [], 5.0) == [(1.0, 0.5)]
    nocens = Dataset.from_arrays([1.0, 2.0], [1, 1], [0, 0])
    assert cumhaz_increments(fit_hazard(nocens, "censoring", None, True), 0, [], 5.0) == []


def test_increments_sum_to_cumhaz(sim1):
    fit = fit_hazard(sim1, "censoring", "all", True)
    l = sim1.covariates[10]
    for a in (0, 1):
        inc = cumhaz_increments(fit, a, l, 2.0)
        assert [t for t, _ in inc] == sorted(t for t, _ in inc)
        total = sum(d for _, d in inc)
        assert total == pytest.approx(fit.cumhaz(a, l[None, :], 2.0)[0], rel=1e-12)
        fe = HazardFit(**{**fit.__dict__, "form": "exponential"})
        assert predict_survival(fe, 2.0, a, l) == pytest.approx(np.exp(-total), rel=1e-12)


def test_constant_covariate_dropped(rng):
    ds = _rounded_data(rng)
    ds2 = Dataset.from_arrays(ds.time, ds.status, ds.treatment,
                              np.column_stack([np.full(len(ds), 3.0)]))
    with pytest.warns(NuisanceWarning, match="no within-stratum variation"):
        fit = fit_hazard(ds2, "event", "all", True)
    assert fit.coefficients.size == 0
    km = fit_hazard(ds, "event", None, True)
    for a in (0, 1):
        t1, d1 = fit.curve(a)
        t0, d0 = km.curve(a)
        assert np.array_equal(t1, t0) and np.allclose(d1, d0, rtol=0, atol=1e-15)


def _breslow_nll(beta, groups):
    total = 0.0
    for time, status, X in groups:
        lp = X @ beta
        for i in np.nonzero(status == 1)[0]:
            risk = time >= time[i]
            total -= lp[i] - np.log(np.sum(np.exp(lp[risk])))
    return total


def test_cox_matches_independent_optimizers(rng):
    ds = _rounded_data(rng, 300)
    fit = fit_hazard(ds, "event", "all", True)
    assert fit.score_norm <= 1e-9
    groups = [(ds.time[ds.treatment == a], ds.status[ds.treatment == a],
               ds.covariates[ds.treatment == a]) for a in (0, 1)]
    opt = minimize(_breslow_nll, np.zeros(2), args=(groups,), method="BFGS",
                   options={"gtol": 1e-10})
    assert np.allclose(fit.coefficients, opt.x, atol=1e-5)
    assert _breslow_nll(fit.coefficients, groups) <= opt.fun + 1e-9
    ph = PHReg(ds.time, ds.covariates, status=ds.status, strata=ds.treatment, ties="breslow").fit()
    assert np.allclose(fit.coefficients, ph.params, atol=1e-7)


def test_cox_baseline_matches_statsmodels(rng):
    ds = _rounded_data(rng, 300)
    fit = fit_hazard(ds, "event", "all", False)
    ph = PHReg(ds.time, ds.covariates, status=ds.status, ties="breslow").fit()
    times, cum, _ = ph.baseline_cumulative_hazard[0]
    mine_t, inc = fit.curve(0)
    mine = np.cumsum(inc) * np.exp(-fit.center @ fit.coefficients)
    assert np.allclose(mine_t, times)
    # statsmodels reports the left limit at each jump time
    assert cum[0] == 0.0
    assert np.allclose(mine[:-1], cum[1:], rtol=1e-6)


def test_cox_row_order_invariance(rng):
    ds = _rounded_data(rng, 300)
    perm = rng.permutation(len(ds))
    b0 = fit_hazard(ds, "event", "all", True).coefficients
    b1 = fit_hazard(ds.subset(perm), "event", "all", True).coefficients
    assert np.max(np.abs(b0 - b1)) <= 1e-9


def test_cox_consistency_large_n(scenario1):
    # at n = 1e5 the L2 coefficient has SE ~0.025, wider than the tolerance;
    # 2e6 subjects bring it to ~0.006
    ds = sample_scenario(scenario1, 2_000_000, make_rng(99))
    arm0 = ds.subset(np.nonzero(ds.treatment == 0)[0])
    fit = fit_hazard(arm0, "event", "all", True)
    assert abs(fit.coefficients[0] - (-0.023)) <= 0.02
    assert abs(fit.coefficients[1] - (-0.56)) <= 0.02


def test_product_form_error():
    fit = HazardFit("event", False, (0,), np.array([1.0]), np.array([0.0]),
                    {0: (np.array([1.0]), np.array([0.6]))})
    with pytest.raises(SurvivalFormError, match="exponential"):
        predict_survival(fit, 2.0, 0, [1.0])
    fe = HazardFit(**{**fit.__dict__, "form": "exponential"})
    assert predict_survival(fe, 2.0, 0, [1.0]) == pytest.approx(np.exp(-0.6 * np.e))


def test_propensity_examples(rng):
    A = np.array([1] * 40 + [0] * 60)
    ds = Dataset.from_arrays(np.ones(100), np.ones(100), A, rng.normal(size=(100, 1)))
    fit = fit_propensity(ds, "intercept")
    assert np.allclose(fit.predict(ds.covariates), 0.4, atol=1e-12)
    known = fit_propensity(ds, "known", known_prob=0.5)
    assert np.all(known.predict(ds.covariates) == 0.5)
    with pytest.raises(FitError, match="one treatment arm"):
        fit_propensity(Dataset.from_arrays([1, 2], [1, 1], [1, 1]), "intercept")


def test_propensity_separation():
    L = np.arange(20.0)[:, None]
    A = (L[:, 0] > 9).astype(int)
    ds = Dataset.from_arrays(np.ones(20), np.ones(20), A, L)
    with pytest.raises(SeparationError, match="known randomization"):
        fit_propensity(ds, "main")


def test_propensity_consistency_and_glm_oracle():
    spec = calibrated(SCENARIO_3)
    ds = sample_scenario(spec, 100_000, make_rng(5))
    fit = fit_propensity(ds, "main", floor=0.001)
    assert np.allclose(fit.coefficients, [1.0, 0.025, -0.5], atol=0.05)
    X = sm.add_constant(ds.covariates)
    glm = sm.GLM(ds.treatment.astype(float), X, family=sm.families.Binomial()).fit(tol=1e-12)
    assert np.allclose(fit.coefficients, glm.params, atol=1e-7)


def test_outcome_saturated_cells(rng):
    ds = discrete_dataset(3000, rng)
    y = 45.0
    alive = ds.time > 1.0
    for link in ("logit", "probit"):
        fit = fit_outcome(ds, 1.0, y, "main_interaction", link)
        for a in (0, 1):
            for l in (0.0, 1.0):
                cell = alive & (ds.treatment == a) & (ds.covariates[:, 0] == l)
                want = np.mean(ds.marker[cell] > y)
                assert fit.predict(a, np.array([[l]]))[0] == pytest.approx(want, abs=1e-9)
    fit = fit_outcome(ds, 1.0, y, "intercept", "logit")
    assert fit.predict(0, ds.covariates[:1])[0] == pytest.approx(np.mean(ds.marker[alive] > y), abs=1e-10)


def test_outcome_probit_matches_glm(sim1):
    fit = fit_outcome(sim1, 2.0, 45.0, "main_interaction", "probit")
    rows = sim1.time > 2.0
    a = sim1.treatment[rows].astype(float)
    L = sim1.covariates[rows]
    X = np.column_stack([np.ones(a.size), a, L, a[:, None] * L])
    glm = sm.GLM((sim1.marker[rows] > 45).astype(float), X,
                 family=sm.families.Binomial(sm.families.links.Probit())).fit(tol=1e-12)
    assert np.allclose(fit.coefficients, glm.params, atol=1e-6)


def test_outcome_consistency_large_n(scenario1):
    # the L2 = 1 cells hold ~7k survivors per arm at n = 1e5, where the
    # pointwise SE of G near 0.5 is ~0.007; 2e6 subjects make 0.01 a >3 SE bound
    ds = sample_scenario(scenario1, 2_000_000, make_rng(17))
    fit = fit_outcome(ds, 2.0, 45.0, "main_interaction", "probit")
    L1 = np.linspace(20, 80, 31)
    worst = 0.0
    for a in (0, 1):
        for l2 in (0.0, 1.0):
            L = np.column_stack([L1, np.full_like(L1, l2)])
            true = norm.sf((45.0 - scenario1.outcome_mean(a, L1, l2)) / scenario1.outcome_sd(a))
            worst = max(worst, np.max(np.abs(fit.predict(a, L) - true)))
    assert worst <= 0.01


def test_outcome_constant_class_warns():
    ds = Dataset.from_arrays([3.0, 4.0], [0, 0], [0, 1], None, [50.0, 60.0])
    with pytest.warns(NuisanceWarning, match="constant"):
        fit = fit_outcome(ds, 2.0, 10.0, "intercept", "logit")
    assert fit.predict(0, np.zeros((1, 0)))[0] == 1.0


def _mar_dataset(n, rng, p_fn):
    A = (rng.random(n) < 0.5).astype(int)
    R = (rng.random(n) < p_fn(A)).astype(int)
    marker = np.where(R == 1, rng.normal(50, 10, n), np.nan)
    return Dataset.from_arrays(np.full(n, 5.0), np.zeros(n), A, None, marker, R)


def test_missingness_fits(rng):
    ds = _mar_dataset(5000, rng, lambda A: np.full(A.size, 0.8))
    fit = fit_missingness(ds, 2.0, "intercept")
    assert fit.predict(0, np.zeros((1, 0)))[0] == pytest.approx(np.mean(ds.observed), abs=1e-10)
    full = _mar_dataset(50, rng, lambda A: np.ones(A.size))
    assert np.all(fit_missingness(full, 2.0).predict(1, np.zeros((5, 0))) == 1.0)
    big = _mar_dataset(100_000, rng, lambda A: expit(0.5 + 0.3 * A))
    coef = fit_missingness(big, 2.0, "main_arm").coefficients
    assert np.allclose(coef, [0.5, 0.3], atol=0.05)


def test_cv_select_trivia(sim1):
    ctx = FitContext(2.0, 45.0)
    one = cv_select(["logit"], sim1, 5, ctx, 0, "propensity")
    assert one.index == 0
    twin = cv_select(["logit", "logit"], sim1, 5, ctx, 0, "propensity")
    assert twin.index == 0


def test_cv_select_failing_candidate(sim1):
    def broken(d, c):
        raise FitError("boom")

    bad = register_learner("propensity", "broken-test", broken)
    ctx = FitContext(2.0, 45.0)
    with pytest.warns(NuisanceWarning, match="broken-test"):
        sel = cv_select([bad, get_learner("propensity", "intercept")], sim1, 3, ctx, 0)
    assert sel.name == "intercept" and np.isinf(sel.cv_loss[0])
    with pytest.raises(FitError, match="every"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cv_select([bad, bad], sim1, 3, ctx, 0)


def test_cv_select_picks_true_propensity_model():
    spec = calibrated(SCENARIO_3)
    ctx = FitContext(2.0, 45.0)
    wins = 0
    for r in range(100):
        ds = sample_scenario(spec, 5000, make_rng(321, r))
        wins += cv_select(["intercept", "logit"], ds, 5, ctx, r, "propensity").name == "logit"
    assert wins >= 95


def test_bundle_predictions_valid(sim1):
    b = fit_bundle(sim1, 2.0, 45.0)
    L = sim1.covariates
    for a in (0, 1):
        for v in (b.propensity.predict(L), b.outcome.predict(a, L),
                  b.event.survival(a, L, 2.0), b.censoring.survival(a, L, 2.0)):
            assert np.all(np.isfinite(v)) and np.all(v > 0) and np.all(v <= 1)
    assert '"selected"' in b.to_json()
