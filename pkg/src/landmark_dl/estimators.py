"""Plug-in, one-step, unadjusted and efficient-survival estimators.

Every debiased estimator is assembled from two per-subject arrays: the
plug-in term (a regression prediction) and the debiasing term (an inverse
weighted residual). ``point = mean(plug) + mean(debias)`` and the estimated
influence value of subject ``i`` is ``plug[i] - point + debias[i]``. The
cross-fitting module reuses the same term functions with out-of-fold
nuisances.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels
from .data import Dataset, landmark_view
from .nuisance import HazardFit, NuisanceBundle


class EstimationError(RuntimeError):
    """Estimation failed for a reason other than invalid input (CLI exit code 3)."""


class FloorWarning(UserWarning):
    pass


@dataclass
class EifSample:
    """A point estimate with its per-subject estimated influence values."""

    estimand_label: str
    point: float
    influence_values: np.ndarray
    floor_hits: int = 0

    def __post_init__(self):
        self.influence_values = np.asarray(self.influence_values, dtype=float)
        if not np.all(np.isfinite(self.influence_values)) or not math.isfinite(self.point):
            raise EstimationError(f"{self.estimand_label}: non-finite estimate or influence values")

    @property
    def n(self) -> int:
        return self.influence_values.shape[0]

    def to_dict(self):
        return {"label": self.estimand_label, "point": self.point, "n": self.n,
                "influence_values": self.influence_values.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["label"], d["point"], np.array(d["influence_values"], dtype=float))


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    p_value: float = float("nan")
    label: str = ""

    def to_dict(self):
        return {"label": self.label, "estimate": self.estimate, "se": self.std_error,
                "ci": [self.ci_low, self.ci_high], "level": self.level, "p": self.p_value}


def report_from_se(estimate, se, level=0.95, label="", null=0.0) -> EstimateReport:
    z = norm.ppf(0.5 + level / 2)
    p = 2 * norm.sf(abs(estimate - null) / se) if se > 0 else float("nan")
    return EstimateReport(float(estimate), float(se), float(estimate - z * se),
                          float(estimate + z * se), level, float(p), label)


def _mean(x) -> float:
    # compensated summation: independent of any partitioning of the work
    return math.fsum(np.asarray(x, dtype=float).tolist()) / len(x)


def eif_from_terms(label, plug, debias, floor_hits=0) -> EifSample:
    point = _mean(plug) + _mean(debias)
    return EifSample(label, point, plug - point + debias, floor_hits)


def eta_label(a, t, y):
    return f"eta[a={a},y={y:g},t={t:g}]"


def surv_label(a, u):
    return f"S[a={a},u={u:g}]"


# ---------------------------------------------------------------------------
# nuisance evaluation helpers


def _curve_args(fit: HazardFit, a, L):
    times, inc = fit.curve(a)
    return fit.risk(L), times, inc, fit.form == "product"


def _surv(fit: HazardFit, a, L, tau, inclusive=True):
    return fit.survival(a, L, np.full(L.shape[0], float(tau)), inclusive)


def _arm_weights(bundle: NuisanceBundle, dataset: Dataset, a):
    """``I(A = a) / pi_a(L)`` with the floored propensity, and the number of clipped rows."""
    raw = bundle.propensity.predict_raw(dataset.covariates)
    raw_a = raw if a == 1 else 1 - raw
    pa = bundle.propensity.arm_prob(a, dataset.covariates)
    hits = int(np.sum(raw_a < pa))
    return (dataset.treatment == a) / pa, hits


def martingale_integral(bundle: NuisanceBundle, dataset: Dataset, a, horizon, target):
    """``int_0^horizon dM(r) / {S(r|a,L) K(r-|a,L)}`` for every subject, arm-``a`` curves.

    ``target`` selects the censoring (``"censoring"``) or event (``"event"``)
    counting process. Returns ``(values, floor_hits)``.
    """
    L = dataset.covariates
    rS, sT, sInc, prodS = _curve_args(bundle.event, a, L)
    rK, kT, kInc, prodK = _curve_args(bundle.censoring, a, L)
    if target == "censoring":
        code, jumped = kernels.CENSORING, dataset.status == 0
    else:
        code, jumped = kernels.EVENT, dataset.status == 1
    for fit, r, inc, prod in ((bundle.event, rS, sInc, prodS), (bundle.censoring, rK, kInc, prodK)):
        fit._check_form(r, fit.curve(a)[0], inc, horizon)
    return kernels.mart_integral(code, rS, sT, sInc, rK, kT, kInc, dataset.time, jumped,
                                 horizon, prodS, prodK, bundle.floor)


def censoring_mart_integral(bundle: NuisanceBundle, subject, t, a=None) -> float:
    """Censoring-martingale integral for one subject (a one-row :class:`Dataset`).

    Uses the curves of the subject's own arm unless ``a`` is given.
    """
    if isinstance(subject, Dataset):
        ds = subject
    else:
        ds = Dataset.from_records([subject])
    arm = int(ds.treatment[0]) if a is None else a
    vals, _ = martingale_integral(bundle, ds, arm, t, "censoring")
    return float(vals[0])


# ---------------------------------------------------------------------------
# plug-in and one-step


def plugin_terms(bundle: NuisanceBundle, dataset: Dataset, a, t, outcome=None):
    outcome = outcome or bundle.outcome
    L = dataset.covariates
    return outcome.predict(a, L) * _surv(bundle.event, a, L, t)


def plugin_eta(bundle: NuisanceBundle, dataset: Dataset, a, t, y=None) -> float:
    """Average over all subjects of ``G(y|a,L) S(t|a,L)``."""
    _check_outcome(bundle, t, y)
    return _mean(plugin_terms(bundle, dataset, a, t))


def _check_outcome(bundle, t, y):
    if bundle.outcome is None:
        raise EstimationError("bundle has no outcome model")
    if y is not None and (bundle.outcome.y != y or bundle.outcome.t != t):
        raise EstimationError(f"outcome model was fitted at (t={bundle.outcome.t:g}, "
                              f"y={bundle.outcome.y:g}), not (t={t:g}, y={y:g})")


def eta_terms(bundle: NuisanceBundle, dataset: Dataset, a, t, y, mar=False):
    """Per-subject ``(plug, debias, floor_hits)`` for ``eta_a(y)`` at landmark ``t``."""
    _check_outcome(bundle, t, y)
    view = landmark_view(dataset, t, y, "mar" if mar else "none")
    L = dataset.covariates
    G = bundle.outcome.predict(a, L)
    S = _surv(bundle.event, a, L, t)
    Q = G * S
    w, hits = _arm_weights(bundle, dataset, a)
    K_raw = _surv(bundle.censoring, a, L, t, inclusive=False)
    K = np.maximum(K_raw, bundle.floor)
    hits += int(np.sum((K_raw < bundle.floor) & (dataset.treatment == a)))
    J, h2 = martingale_integral(bundle, dataset, a, t, "censoring")
    hits += h2
    alive = view.alive_uncensored
    above = np.where(alive & (view.marker_observed == 1), np.nan_to_num(view.above_threshold), 0.0)
    if mar:
        if bundle.missingness is None:
            raise EstimationError("MAR mode requires a fitted missingness model")
        p = bundle.missingness.predict(a, L)
        R = view.marker_observed.astype(float)
        hits += int(np.sum(alive & (dataset.treatment == a) & (bundle.missingness.model.predict(
            np.full(L.shape[0], float(a)), L) < bundle.floor)))
        # augmented inverse weighting of the marker among survivors
        resp = np.where(alive, R / p * above + (1.0 - R / p) * G, 0.0)
    else:
        resp = np.where(alive, above, 0.0)
    debias = w * (resp / K - Q * (1.0 - J))
    return Q, debias, hits


def onestep_eta(bundle: NuisanceBundle, dataset: Dataset, a, t, y, mar=False) -> EifSample:
    """One-step estimator of ``eta_a(y) = P(T > t, Y > y)`` under ``A = a``."""
    plug, debias, hits = eta_terms(bundle, dataset, a, t, y, mar)
    _warn_floor(hits)
    return eif_from_terms(eta_label(a, t, y), plug, debias, hits)


def surv_terms(bundle: NuisanceBundle, dataset: Dataset, a, u):
    """Per-subject ``(plug, debias, floor_hits)`` for the efficient estimator of ``S_a(u)``."""
    L = dataset.covariates
    S = _surv(bundle.event, a, L, u)
    w, hits = _arm_weights(bundle, dataset, a)
    J, h2 = martingale_integral(bundle, dataset, a, u, "event")
    return S, -S * w * J, hits + h2


def onestep_surv(bundle: NuisanceBundle, dataset: Dataset, a, u) -> EifSample:
    """Efficient (augmented) estimator of the counterfactual survival ``S_a(u)``."""
    if u > float(np.max(dataset.time)):
        raise EstimationError(f"u={u:g} exceeds the largest follow-up time")
    plug, debias, hits = surv_terms(bundle, dataset, a, u)
    _warn_floor(hits)
    return eif_from_terms(surv_label(a, u), plug, debias, hits)


def _warn_floor(hits):
    if hits:
        warnings.warn(f"positivity floor applied {hits} time(s)", FloorWarning, stacklevel=3)


def contrast(e1: EifSample, e0: EifSample, label=None) -> EifSample:
    """Difference ``e1 - e0`` of two estimates on the same subjects."""
    if e1.n != e0.n:
        raise ValueError(f"contrast of samples with different n ({e1.n} vs {e0.n})")
    return EifSample(label or f"{e1.estimand_label}-{e0.estimand_label}",
                     e1.point - e0.point, e1.influence_values - e0.influence_values,
                     e1.floor_hits + e0.floor_hits)


def linear_combination(samples, weights, label) -> EifSample:
    n = {s.n for s in samples}
    if len(n) != 1:
        raise ValueError("samples differ in n")
    point = math.fsum(w * s.point for w, s in zip(weights, samples))
    infl = sum(w * s.influence_values for w, s in zip(weights, samples))
    return EifSample(label, point, infl, sum(s.floor_hits for s in samples))


def integrate_grid(samples, y_grid, width=None, label="psi") -> EifSample:
    """Trapezoid integral over ``y_grid`` of a family of estimates (influence values alike).

    A single grid point is a one-cell rectangle of the given ``width``.
    """
    y = np.asarray(y_grid, dtype=float)
    if y.size < 2:
        if width is None or y.size == 0:
            raise ValueError("integration grid needs at least 2 points (or a cell width)")
        w = np.array([float(width)])
    else:
        if np.any(np.diff(y) <= 0):
            raise ValueError("grid must be strictly increasing")
        d = np.diff(y)
        w = np.zeros(y.size)
        w[:-1] += d / 2
        w[1:] += d / 2
    return linear_combination(samples, w, label)


def mean_psi(bundle: NuisanceBundle, dataset: Dataset, t, y_grid, width=None,
             mar=False) -> EifSample:
    """``psi = int {eta_1(y) - eta_0(y)} dy`` with the outcome model refit at each grid point."""
    samples = []
    for y in y_grid:
        b = bundle.with_outcome(dataset, t, y)
        samples.append(contrast(onestep_eta(b, dataset, 1, t, y, mar),
                                onestep_eta(b, dataset, 0, t, y, mar)))
    return integrate_grid(samples, y_grid, width, label=f"psi[t={t:g}]")


# ---------------------------------------------------------------------------
# unadjusted comparators


def _km_at(time, jump, risk_time, at, inclusive):
    """Product-limit estimate at ``at`` for a process jumping at ``time[jump]``.

    ``risk_time`` is the time up to which each subject is at risk (inclusive).
    """
    jt = np.unique(time[jump])
    jt = jt[jt <= at] if inclusive else jt[jt < at]
    if jt.size == 0:
        return 1.0, jt, np.zeros(0), np.zeros(0)
    st = np.sort(time[jump])
    d = np.searchsorted(st, jt, side="right") - np.searchsorted(st, jt, side="left")
    rs = np.sort(risk_time)
    r = rs.size - np.searchsorted(rs, jt, side="left")
    return float(np.prod(1.0 - d / r)), jt, d, r


def _censoring_km(time, status, t):
    # deaths precede censorings, so a death at s is not at risk for censoring at s
    risk = np.where(status == 1, np.nextafter(time, -np.inf), time)
    return _km_at(time, status == 0, risk, t, inclusive=False)[0]


def unadjusted_eta_point(dataset: Dataset, a, t, y) -> float:
    view = landmark_view(dataset, t, y, "none")
    return _unadj(dataset.time, dataset.status, dataset.treatment,
                  np.nan_to_num(view.above_threshold), a, t)


def _unadj(time, status, treat, above, a, t):
    arm = treat == a
    n_a = int(np.sum(arm))
    if n_a == 0:
        raise EstimationError(f"arm {a} is empty")
    K = _censoring_km(time[arm], status[arm], t)
    if K <= 0:
        raise EstimationError(f"no subject in arm {a} under observation at t={t:g}")
    hits = math.fsum((arm & (time > t) & (above > 0)).astype(float).tolist())
    return hits / (n_a * K)


def unadjusted_eta(dataset: Dataset, a, t, y, n_boot=500, seed=0, level=0.95) -> EstimateReport:
    """Arm-wise IPCW fraction ``P_n I(A=a, T*>t, Y>y) / {K(t|a) pi_a}``; bootstrap SE."""
    return _unadj_boot(dataset, t, y, n_boot, seed, level, (a,), eta_label(a, t, y) + "/unadj")


def unadjusted_eta_contrast(dataset: Dataset, t, y, n_boot=500, seed=0, level=0.95):
    return _unadj_boot(dataset, t, y, n_boot, seed, level, (1, 0), f"eta[y={y:g},t={t:g}]/unadj")


def _unadj_boot(dataset, t, y, n_boot, seed, level, arms, label):
    view = landmark_view(dataset, t, y, "none")
    above = np.nan_to_num(view.above_threshold)
    time, status, treat = dataset.time, dataset.status, dataset.treatment

    def stat(idx):
        vals = [_unadj(time[idx], status[idx], treat[idx], above[idx], a, t) for a in arms]
        return vals[0] if len(vals) == 1 else vals[0] - vals[1]

    point = stat(np.arange(len(dataset)))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = stat(rng.integers(0, len(dataset), len(dataset)))
    se = float(np.std(boots, ddof=1)) if n_boot > 1 else float("nan")
    return report_from_se(point, se, level, label)


def kaplan_meier(time, status, u):
    """Kaplan-Meier estimate at ``u`` and its Greenwood variance."""
    time = np.asarray(time, dtype=float)
    status = np.asarray(status)
    s, jt, d, r = _km_at(time, status == 1, time, u, inclusive=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.sum(d / (r * (r - d))) if jt.size else 0.0
    return s, s * s * gw


def unadjusted_surv(dataset: Dataset, a, u, level=0.95) -> EstimateReport:
    """Arm-``a`` Kaplan-Meier at ``u`` with Greenwood standard error."""
    arm = dataset.treatment == a
    if not np.any(arm):
        raise EstimationError(f"arm {a} is empty")
    s, var = kaplan_meier(dataset.time[arm], dataset.status[arm], u)
    se = math.sqrt(var) if np.isfinite(var) else float("nan")
    return report_from_se(s, se, level, surv_label(a, u) + "/unadj")
