import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from landmark_dl.data import Dataset
from landmark_dl.estimators import (EifSample, EstimationError, censoring_mart_integral, contrast,
                                    eif_from_terms, eta_terms, integrate_grid, mean_psi,
                                    onestep_eta, onestep_surv, plugin_eta, unadjusted_eta,
                                    unadjusted_eta_point, unadjusted_surv)
from landmark_dl.inference import se_ci
from landmark_dl.nuisance import cumhaz_increments, fit_bundle, predict_survival
from landmark_dl.simulate import exact_truth, make_rng, oracle_truth, sample_scenario

from conftest import discrete_dataset

KM_LIB = {"propensity": ("intercept",), "event": ("km",), "censoring": ("km",), "outcome": ("arm",)}


def _mart_oracle(bundle, t, time, status, a):
    # direct summation over the censoring jump list of the covariate-free fits
    c = min(time, t)
    total = 0.0
    for s, d in cumhaz_increments(bundle.censoring, a, [], c):
        if status == 1 and s == time:
            continue  # the death at s precedes a censoring at s
        H = predict_survival(bundle.event, s, a, []) * bundle.censoring.survival(
            a, np.zeros((1, 0)), s, inclusive=False)[0]
        total -= d / max(H, bundle.floor)
    if status == 0 and time <= t:
        H = predict_survival(bundle.event, time, a, []) * bundle.censoring.survival(
            a, np.zeros((1, 0)), time, inclusive=False)[0]
        total += 1.0 / max(H, bundle.floor)
    return total


def _cens_data(rng, n=300, rounded=True):
    T = rng.exponential(3.0, n)
    C = rng.exponential(4.0, n)
    if rounded:
        T, C = np.round(T, 1) + 0.05, np.round(C, 1) + 0.05
    time = np.minimum(T, C)
    status = (T <= C).astype(int)
    A = (rng.random(n) < 0.5).astype(int)
    marker = np.where(time > 2.0, rng.normal(50, 10, n), np.nan)
    return Dataset.from_arrays(time, status, A, None, marker)


def test_censoring_integral_direct_summation(rng):
    ds = _cens_data(rng)
    b = fit_bundle(ds, 2.0, 45.0, KM_LIB)
    checked = 0
    for i in range(len(ds)):
        sub = ds.subset([i])
        a = int(ds.treatment[i])
        got = censoring_mart_integral(b, sub, 2.0)
        want = _mart_oracle(b, 2.0, ds.time[i], ds.status[i], a)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
        checked += ds.status[i] == 0 and ds.time[i] < 2.0
    assert checked > 10


def test_censoring_integral_zero_without_censoring():
    ds = Dataset.from_arrays([1.0, 3.0, 4.0], [1, 1, 1], [0, 0, 0], None, [np.nan, 50.0, 40.0])
    b = fit_bundle(ds, 2.0, 45.0, {**KM_LIB, "propensity": ("known",)}, known_prob=0.5)
    for i in range(3):
        assert censoring_mart_integral(b, ds.subset([i]), 2.0) == 0.0


def test_censoring_integral_approximate_score_zero(scenario1):
    ds = sample_scenario(scenario1, 2000, make_rng(4))
    b = fit_bundle(ds, 2.0, 45.0, KM_LIB)
    for a in (0, 1):
        Q, _, _ = eta_terms(b, ds, a, 2.0, 45.0)
        J = np.array([censoring_mart_integral(b, ds.subset([i]), 2.0, a) for i in range(len(ds))])
        w = (ds.treatment == a) / b.propensity.arm_prob(a, ds.covariates)
        assert abs(np.mean(w * Q * J)) <= 0.02


def _aipw_oracle(b, ds, a, t, y, pi):
    # independent AIPW closed form for uncensored data
    L = ds.covariates
    Q = b.outcome.predict(a, L) * b.event.survival(a, L, t)
    pa = pi if a == 1 else 1 - pi
    ind = ((ds.time > t) & (np.nan_to_num(ds.marker, nan=-np.inf) > y)).astype(float)
    return math.fsum(Q + (ds.treatment == a) / pa * (ind - Q)) / len(ds)


def test_no_censoring_reduces_to_aipw(scenario1):
    spec = replace(scenario1, censoring=False)
    ds = sample_scenario(spec, 1500, make_rng(8))
    for lib in ({"event": ("cox",), "outcome": ("probit",)}, {"event": ("km",), "outcome": ("arm",)}):
        b = fit_bundle(ds, 2.0, 45.0, lib, known_prob=0.5)
        for a in (0, 1):
            e = onestep_eta(b, ds, a, 2.0, 45.0)
            assert abs(e.point - _aipw_oracle(b, ds, a, 2.0, 45.0, 0.5)) <= 1e-12


def _stratified(ds, a, t, y):
    L = ds.covariates[:, 0]
    total = 0.0
    for l in np.unique(L):
        cell = L == l
        arm = cell & (ds.treatment == a)
        hit = (ds.time[arm] > t) & (np.nan_to_num(ds.marker[arm], nan=-np.inf) > y)
        total += cell.mean() * hit.mean()
    return total


def test_saturated_no_censoring_is_stratified_estimate(rng):
    ds = discrete_dataset(2000, rng, p_treat=0.6)
    b = fit_bundle(ds, 1.0, 45.0, {"propensity": ("logit",), "event": ("cox",),
                                   "censoring": ("km",), "outcome": ("logit",)})
    for a in (0, 1):
        assert onestep_eta(b, ds, a, 1.0, 45.0).point == pytest.approx(_stratified(ds, a, 1.0, 45.0),
                                                                      abs=1e-10)


class CellKM:
    """Kaplan-Meier within each (arm, binary covariate) cell."""

    def __init__(self, ds):
        self.ds = ds

    def survival(self, a, L, tau, inclusive=True):
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (L.shape[0],))
        out = np.empty(L.shape[0])
        for i in range(L.shape[0]):
            cell = (self.ds.treatment == a) & (self.ds.covariates[:, 0] == L[i, 0])
            out[i] = np.mean(self.ds.time[cell] > tau[i])  # uncensored data
        return out


def test_plugin_saturated_and_monotone(rng):
    ds = discrete_dataset(2000, rng)
    b0 = fit_bundle(ds, 1.0, 40.0, {"outcome": ("logit",)}, known_prob=0.5)
    prev = np.inf
    for y in (30.0, 40.0, 45.0, 50.0, 60.0):
        b = replace(b0.with_outcome(ds, 1.0, y), event=CellKM(ds))
        for a in (0, 1):
            assert plugin_eta(b, ds, a, 1.0, y) == pytest.approx(_stratified(ds, a, 1.0, y), abs=1e-10)
        p1 = plugin_eta(b, ds, 1, 1.0, y)
        assert p1 <= prev
        prev = p1


def test_plugin_bounds_and_low_threshold(sim1):
    b = fit_bundle(sim1, 2.0, 45.0)
    for a in (0, 1):
        s_mean = np.mean(b.event.survival(a, sim1.covariates, 2.0))
        assert 0 <= plugin_eta(b, sim1, a, 2.0, 45.0) <= s_mean
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        low = b.with_outcome(sim1, 2.0, -1e6)
    for a in (0, 1):
        assert plugin_eta(low, sim1, a, 2.0, -1e6) == pytest.approx(
            np.mean(b.event.survival(a, sim1.covariates, 2.0)), abs=1e-15)


def test_plugin_large_n_near_truth(scenario1):
    ds = sample_scenario(scenario1, 100_000, make_rng(31))
    b = fit_bundle(ds, 2.0, 45.0, known_prob=0.5)
    truth = exact_truth(scenario1)
    for a in (0, 1):
        assert abs(plugin_eta(b, ds, a, 2.0, 45.0) - truth[f"eta{a}"]) <= 0.005


def test_influence_values_average_zero(sim1):
    b = fit_bundle(sim1, 2.0, 45.0)
    for a in (0, 1):
        e = onestep_eta(b, sim1, a, 2.0, 45.0)
        Q, debias, _ = eta_terms(b, sim1, a, 2.0, 45.0)
        D = Q - e.point + debias  # recomputed at the returned point
        assert abs(np.mean(D)) <= 1e-10
        assert np.allclose(D, e.influence_values, rtol=0, atol=1e-15)
        s = onestep_surv(b, sim1, a, 2.0)
        assert abs(np.mean(s.influence_values)) <= 1e-10


def test_onestep_surv_equals_kaplan_meier(rng):
    ds = _cens_data(rng, 500)
    b = fit_bundle(ds, 2.0, None, {"propensity": ("intercept",), "event": ("km",), "censoring": ("km",)})
    for a in (0, 1):
        for u in (0.5, 1.05, 2.0, 3.3):
            km = unadjusted_surv(ds, a, u).estimate
            assert onestep_surv(b, ds, a, u).point == pytest.approx(km, abs=1e-10)


def test_onestep_surv_at_zero(sim1):
    b = fit_bundle(sim1, 2.0, None)
    e = onestep_surv(b, sim1, 1, 0.0)
    assert e.point == 1.0 and np.all(e.influence_values == 0)
    with pytest.raises(EstimationError):
        onestep_surv(b, sim1, 1, 1e9)


def test_unadjusted_examples():
    ds = Dataset.from_arrays([3.0, 1.0, 3.0, 3.0], [0, 1, 0, 0], [1, 1, 0, 0], None,
                             [50.0, np.nan, 40.0, 60.0])
    assert unadjusted_eta_point(ds, 1, 2.0, 45.0) == 0.5
    assert unadjusted_eta_point(ds, 0, 2.0, 45.0) == 0.5
    ev = Dataset.from_arrays([1.0, 2.0, 3.0], [1, 1, 1], [1, 1, 1])
    assert unadjusted_surv(ev, 1, 2.5).estimate == pytest.approx(1 / 3, abs=1e-15)
    alive = Dataset.from_arrays([5.0, 6.0], [0, 0], [1, 1])
    assert unadjusted_surv(alive, 1, 2.5).estimate == 1.0
    gone = Dataset.from_arrays([1.0, 1.5], [0, 0], [0, 0])
    with pytest.raises(EstimationError, match="under observation"):
        unadjusted_eta_point(gone, 0, 2.0, 45.0)


def test_unadjusted_ipcw_oracle(rng):
    ds = _cens_data(rng, 400)
    for a in (0, 1):
        arm = ds.treatment == a
        tt, st = ds.time[arm], ds.status[arm]
        K = 1.0
        for c in sorted(set(tt[(st == 0) & (tt < 2.0)])):
            d = np.sum((tt == c) & (st == 0))
            K *= 1 - d / (np.sum(tt > c) + d)
        hits = np.sum((tt > 2.0) & (np.nan_to_num(ds.marker[arm], nan=-np.inf) > 45.0))
        assert unadjusted_eta_point(ds, a, 2.0, 45.0) == pytest.approx(hits / (arm.sum() * K), rel=1e-12)


def test_unadjusted_bootstrap_seeded(sim1):
    r1 = unadjusted_eta(sim1, 1, 2.0, 45.0, n_boot=50, seed=3)
    r2 = unadjusted_eta(sim1, 1, 2.0, 45.0, n_boot=50, seed=3)
    assert r1 == r2 and r1.std_error > 0


def test_contrast_properties(sim1):
    b = fit_bundle(sim1, 2.0, 45.0)
    e1, e0 = onestep_eta(b, sim1, 1, 2.0, 45.0), onestep_eta(b, sim1, 0, 2.0, 45.0)
    z = contrast(e1, e1)
    assert z.point == 0 and np.all(z.influence_values == 0)
    d = contrast(e1, e0)
    assert se_ci(d).std_error <= se_ci(e1).std_error + se_ci(e0).std_error
    with pytest.raises(ValueError):
        contrast(e1, EifSample("x", 0.0, np.zeros(3)))


def test_integration_rules():
    c = 0.3
    grid = np.linspace(0, 100, 11)
    fam = [EifSample("c", c, np.zeros(4)) for _ in grid]
    assert integrate_grid(fam, grid).point == pytest.approx(100 * c, rel=1e-14)
    one = integrate_grid([EifSample("c", c, np.ones(4))], [0.0], width=1.0)
    assert one.point == c
    with pytest.raises(ValueError):
        integrate_grid(fam[:1], [0.0])


def test_binary_marker_single_cell(rng):
    n = 800
    A = (rng.random(n) < 0.5).astype(int)
    T = rng.exponential(3.0, n)
    marker = np.where(T > 1.0, (rng.random(n) < 0.4 + 0.2 * A).astype(float), np.nan)
    ds = Dataset.from_arrays(T, np.ones(n), A, None, marker)
    b = fit_bundle(ds, 1.0, 0.0, KM_LIB)
    psi = mean_psi(b, ds, 1.0, [0.0], width=1.0)
    d = onestep_eta(b, ds, 1, 1.0, 0.0).point - onestep_eta(b, ds, 0, 1.0, 0.0).point
    assert psi.point == pytest.approx(d, abs=1e-14)


def test_mean_psi_near_oracle(scenario1):
    ds = sample_scenario(scenario1, 5000, make_rng(77))
    # the arm-only candidate takes over where the probit model separates in the tails
    b = fit_bundle(ds, 2.0, 45.0, {"outcome": ("arm", "probit")}, known_prob=0.5)
    grid = np.linspace(0.0, 120.0, 121)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        psi = mean_psi(b, ds, 2.0, grid)
    truth = oracle_truth(scenario1, N=1_000_000)["psi"]
    assert abs(psi.point - truth) <= 2 * se_ci(psi).std_error


def test_mar_all_observed_matches_complete_case(sim1):
    b = fit_bundle(sim1, 2.0, 45.0, mar=True)
    for a in (0, 1):
        assert onestep_eta(b, sim1, a, 2.0, 45.0, mar=True).point == pytest.approx(
            onestep_eta(b, sim1, a, 2.0, 45.0).point, abs=1e-14)


def test_mar_recovers_truth(scenario1):
    ds = sample_scenario(scenario1, 20_000, make_rng(55))
    rng = np.random.default_rng(1)
    p = 1 / (1 + np.exp(-(0.2 + 0.04 * (ds.covariates[:, 0] - 46) + 0.5 * ds.treatment)))
    R = (rng.random(len(ds)) < p).astype(int)
    marker = np.where(R == 1, ds.marker, np.nan)
    obs = np.where(np.isnan(ds.marker), 0, R)
    mds = Dataset.from_arrays(ds.time, ds.status, ds.treatment, ds.covariates, marker, obs)
    b = fit_bundle(mds, 2.0, 45.0, known_prob=0.5, mar=True)
    truth = exact_truth(scenario1)
    for a in (0, 1):
        e = onestep_eta(b, mds, a, 2.0, 45.0, mar=True)
        assert abs(e.point - truth[f"eta{a}"]) <= 3 * se_ci(e).std_error
    with pytest.raises(Exception, match="MAR"):
        onestep_eta(b, mds, 0, 2.0, 45.0)


def test_summation_order_independent(sim1):
    b = fit_bundle(sim1, 2.0, 45.0)
    Q, d, _ = eta_terms(b, sim1, 1, 2.0, 45.0)
    perm = np.random.default_rng(0).permutation(Q.size)
    assert eif_from_terms("x", Q, d).point == eif_from_terms("x", Q[perm], d[perm]).point


def test_eif_json_round_trip():
    e = EifSample("eta[a=1,y=45,t=2]", 0.4, np.array([0.1, -0.1, 0.25, -0.25]))
    back = EifSample.from_json(e.to_json())
    assert back.point == e.point and np.array_equal(back.influence_values, e.influence_values)
    with pytest.raises(EstimationError):
        EifSample("bad", float("nan"), np.zeros(2))
