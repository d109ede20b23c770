"""Nuisance models: propensity, event/censoring hazards, outcome tail, missingness.

All fits are plain parametric maximum likelihood (Newton iterations with step
halving). Arm-stratified Cox models with a Breslow baseline double as
Kaplan-Meier when fitted without covariates. :func:`cv_select` is a discrete
super learner over named candidates from :data:`LEARNERS`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from . import kernels
from ._folds import kfold_labels
from .data import Dataset, landmark_view

MAX_ITER = 100
GRAD_TOL = 1e-9
MAX_HALVINGS = 20
SEPARATION_BOUND = 30.0


class FitError(RuntimeError):
    """A nuisance model could not be fitted (CLI exit code 3)."""


class SeparationError(FitError):
    pass


class SurvivalFormError(FitError):
    pass


class NuisanceWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# binary regression


def _link_funcs(link):
    if link == "logit":
        return expit, lambda eta: -np.logaddexp(0.0, -eta), lambda eta: -np.logaddexp(0.0, eta)
    if link == "probit":
        return ndtr, log_ndtr, lambda eta: log_ndtr(-eta)
    raise ValueError(f"unknown link {link!r}")


def _binary_derivs(X, y, beta, link):
    eta = X @ beta
    _, logF, log1mF = _link_funcs(link)
    lf, l1f = logF(eta), log1mF(eta)
    ll = float(np.sum(y * lf + (1 - y) * l1f))
    if link == "logit":
        mu = expit(eta)
        resid = y - mu
        w = mu * (1 - mu)
    else:
        # d/deta log Phi = phi/Phi, computed in log space for the tails
        log_phi = -0.5 * eta**2 - 0.5 * math.log(2 * math.pi)
        r1 = np.exp(log_phi - lf)
        r0 = np.exp(log_phi - l1f)
        resid = y * r1 - (1 - y) * r0
        # expected information phi^2 / (Phi (1 - Phi))
        w = np.exp(2 * log_phi - lf - l1f)
    return ll, X.T @ resid, (X * w[:, None]).T @ X


def fit_binary(X, y, link="logit", max_iter=MAX_ITER, tol=GRAD_TOL):
    """Maximum-likelihood binary regression by Fisher scoring with step halving.

    Stops once the mean score has sup-norm ``<= tol``. Coefficients that
    leave ``[-30, 30]`` are treated as separation.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    beta = np.zeros(p)
    ll, g, info = _binary_derivs(X, y, beta, link)
    for it in range(max_iter + 1):
        if np.max(np.abs(g)) / n <= tol:
            return _polish(X, y, beta, ll, g, info, link), it
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, g, rcond=None)[0]
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            ll_c, g_c, info_c = _binary_derivs(X, y, cand, link)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta, ll, g, info = cand, ll_c, g_c, info_c
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"{link} regression diverging (|beta| > {SEPARATION_BOUND:g}); "
                "the response is (quasi-)separated by the design")
    raise FitError(f"{link} regression did not converge in {max_iter} iterations; "
                   f"final mean score {np.max(np.abs(g)) / n:.3g}")


def _polish(X, y, beta, ll, g, info, link):
    # one extra Newton step once converged; quadratic convergence takes the
    # score to rounding level, so saturated fits reproduce cell proportions
    try:
        cand = beta + np.linalg.solve(info, g)
    except np.linalg.LinAlgError:
        return beta
    ll_c, g_c, _ = _binary_derivs(X, y, cand, link)
    if np.isfinite(ll_c) and ll_c >= ll and np.max(np.abs(g_c)) <= np.max(np.abs(g)):
        return cand
    return beta


DESIGNS = ("intercept", "arm", "main", "main_arm", "main_interaction")


def design_matrix(kind, a, L):
    """Regression design; ``a`` is the arm vector (or None for arm-free designs)."""
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    one = np.ones((n, 1))
    if kind == "intercept":
        return one
    if kind == "main":
        return np.hstack([one, L])
    a = np.asarray(a, dtype=float).reshape(n, 1)
    if kind == "arm":
        return np.hstack([one, a])
    if kind == "main_arm":
        return np.hstack([one, a, L])
    if kind == "main_interaction":
        return np.hstack([one, a, L, a * L])
    raise ValueError(f"unknown design {kind!r}")


@dataclass(frozen=True)
class BinaryFit:
    link: str
    design: str
    coefficients: np.ndarray
    constant: float | None = None

    def predict(self, a, L):
        L = np.asarray(L, dtype=float)
        if self.constant is not None:
            return np.full(L.shape[0], self.constant)
        F, _, _ = _link_funcs(self.link)
        return F(design_matrix(self.design, a, L) @ self.coefficients)

    def to_dict(self):
        return {"link": self.link, "design": self.design,
                "coefficients": list(map(float, self.coefficients)),
                "constant": self.constant}


def _fit_binary_model(a, L, y, design, link, what):
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise FitError(f"{what}: no rows to fit")
    if np.all(y == y[0]):
        warnings.warn(f"{what}: all responses equal {int(y[0])}; using the constant fit",
                      NuisanceWarning, stacklevel=3)
        return BinaryFit(link, design, np.zeros(0), constant=float(y[0]))
    X = design_matrix(design, a, L)
    try:
        beta, _ = fit_binary(X, y, link)
    except SeparationError as exc:
        raise SeparationError(f"{what}: {exc}") from None
    return BinaryFit(link, design, beta)


# ---------------------------------------------------------------------------
# propensity


@dataclass(frozen=True)
class PropensityFit:
    kind: str  # known-constant | logistic
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    design: str = "intercept"
    fixed_prob: float | None = None
    floor: float = 0.01

    def predict_raw(self, L):
        L = np.asarray(L, dtype=float)
        if self.fixed_prob is not None:
            return np.full(L.shape[0], self.fixed_prob)
        return expit(design_matrix(self.design, None, L) @ self.coefficients)

    def predict(self, L):
        return np.clip(self.predict_raw(L), self.floor, 1 - self.floor)

    def arm_prob(self, a, L):
        p = self.predict(L)
        return p if a == 1 else 1 - p

    def to_dict(self):
        return {"kind": self.kind, "design": self.design, "fixed_prob": self.fixed_prob,
                "coefficients": list(map(float, self.coefficients))}


def fit_propensity(dataset: Dataset, spec="main", known_prob=None, floor=0.01) -> PropensityFit:
    """Propensity score fit.

    ``spec`` is ``"known"`` (requires ``known_prob``), ``"intercept"`` or
    ``"main"`` (logistic on all covariates).
    """
    if spec == "known" or known_prob is not None:
        if known_prob is None:
            raise ValueError("known propensity requested without a probability")
        return PropensityFit("known-constant", fixed_prob=float(known_prob), floor=floor)
    A = dataset.treatment.astype(float)
    if A.min() == A.max():
        raise FitError("propensity: only one treatment arm present")
    design = {"intercept": "intercept", "main": "main"}[spec]
    X = design_matrix(design, None, dataset.covariates)
    try:
        beta, _ = fit_binary(X, A, "logit")
    except SeparationError:
        raise SeparationError(
            "propensity: treatment is (quasi-)separated by the covariates; "
            "supply a known randomization probability or raise the positivity floor") from None
    return PropensityFit("logistic", beta, design, floor=floor)


# ---------------------------------------------------------------------------
# hazards


@dataclass(frozen=True)
class HazardFit:
    """Arm-stratified (or pooled) Cox model with Breslow baseline jumps.

    ``baseline[s] = (times, increments)`` for stratum ``s`` (0/1 by arm, or
    the single key 0 when pooled); increments refer to the centered linear
    predictor ``(l - center) @ coefficients``.
    """

    target: str
    stratified: bool
    columns: tuple[int, ...]
    coefficients: np.ndarray
    center: np.ndarray
    baseline: dict
    form: str = "product"
    iterations: int = 0
    score_norm: float = 0.0

    def _stratum(self, a):
        return int(a) if self.stratified else 0

    def risk(self, L):
        L = np.asarray(L, dtype=float)
        if not self.columns:
            return np.ones(L.shape[0])
        return np.exp((L[:, list(self.columns)] - self.center) @ self.coefficients)

    def curve(self, a):
        return self.baseline.get(self._stratum(a), (np.zeros(0), np.zeros(0)))

    def _check_form(self, r, times, inc, upto):
        if self.form != "product" or times.size == 0 or r.size == 0:
            return
        k = np.searchsorted(times, upto, side="right")
        if k and float(np.max(r)) * float(np.max(inc[:k])) > 1.0:
            raise SurvivalFormError(
                f"{self.target} model: a hazard increment exceeds 1, so the product-limit "
                "form is undefined; refit with the exponential survival form")

    def survival(self, a, L, tau, inclusive=True):
        """Raw survival ``S(tau|a, l)`` for every row of ``L`` (``tau`` scalar or per row)."""
        r = self.risk(L)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), r.shape)
        times, inc = self.curve(a)
        self._check_form(r, times, inc, float(np.max(tau)) if tau.size else 0.0)
        return kernels.surv_at(r, times, inc, tau, inclusive, self.form == "product")

    def cumhaz(self, a, L, upto):
        times, inc = self.curve(a)
        return self.risk(L) * float(np.sum(inc[times <= upto]))

    def to_dict(self):
        return {
            "target": self.target, "stratified": self.stratified, "form": self.form,
            "columns": list(self.columns),
            "coefficients": list(map(float, self.coefficients)),
            "center": list(map(float, self.center)),
            "baseline": {str(k): {"times": list(map(float, t)), "increments": list(map(float, d))}
                         for k, (t, d) in sorted(self.baseline.items())},
        }


def predict_survival(fit: HazardFit, r: float, a: int, l, raw: bool = True,
                     floor: float = 0.01) -> float:
    """``S(r | a, l)``; with ``raw=False`` the value is floored at ``floor``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    s = float(fit.survival(a, np.atleast_2d(np.asarray(l, dtype=float)), r)[0])
    return s if raw else max(s, floor)


def cumhaz_increments(fit: HazardFit, a: int, l, upto: float) -> list[tuple[float, float]]:
    """Subject-level hazard increments at the baseline jump times ``<= upto``."""
    if upto < 0:
        raise ValueError("upto must be nonnegative")
    times, inc = fit.curve(a)
    r = float(fit.risk(np.atleast_2d(np.asarray(l, dtype=float)))[0])
    keep = times <= upto
    return [(float(t), r * float(d)) for t, d in zip(times[keep], inc[keep])]


def _effective_times(dataset, target):
    # deaths precede censorings: for the censoring process a death at s has
    # already left the risk set at s
    if target == "event":
        return dataset.time, dataset.status.astype(float)
    t = np.where(dataset.status == 1, np.nextafter(dataset.time, -np.inf), dataset.time)
    return t, 1.0 - dataset.status


def fit_hazard(dataset: Dataset, target="event", covariates="all",
               stratify_by_treatment=True, form="product",
               max_iter=MAX_ITER, tol=GRAD_TOL) -> HazardFit:
    """Cox partial-likelihood fit (Breslow ties) with Breslow baseline per stratum.

    ``target="censoring"`` treats censorings as the events. ``covariates``
    is ``"all"``, ``None``/``()`` for a covariate-free (Kaplan-Meier) fit,
    or a sequence of column indices.
    """
    if target not in ("event", "censoring"):
        raise ValueError("target must be 'event' or 'censoring'")
    if form not in ("product", "exponential"):
        raise ValueError("form must be 'product' or 'exponential'")
    if covariates == "all":
        cols = tuple(range(dataset.n_covariates))
    elif covariates is None:
        cols = ()
    else:
        cols = tuple(int(c) for c in covariates)
    time, ev = _effective_times(dataset, target)
    strata = dataset.treatment.astype(int) if stratify_by_treatment else np.zeros(len(dataset), int)
    X = dataset.covariates[:, list(cols)] if cols else np.zeros((len(dataset), 0))

    keep = []
    for j in range(X.shape[1]):
        varies = any(np.ptp(X[strata == s, j]) > 0 for s in np.unique(strata) if np.any(strata == s))
        if varies:
            keep.append(j)
        else:
            warnings.warn(f"{target} model: covariate {cols[j]} has no within-stratum variation; "
                          "dropped (coefficient 0)", NuisanceWarning, stacklevel=2)
    cols = tuple(cols[j] for j in keep)
    X = X[:, keep]
    center = X.mean(axis=0) if X.shape[1] else np.zeros(0)
    Xc = X - center

    groups = []
    for s in np.unique(strata):
        idx = np.nonzero(strata == s)[0]
        o = idx[np.argsort(time[idx], kind="stable")]
        groups.append((int(s), time[o], ev[o], Xc[o]))

    p = Xc.shape[1]
    n = len(dataset)
    beta = np.zeros(p)
    it = 0
    gnorm = 0.0
    if p and ev.sum() > 0:
        def derivs(b):
            ll, g, info = 0.0, np.zeros(p), np.zeros((p, p))
            for _, t_s, e_s, x_s in groups:
                l_s, g_s, i_s = kernels.cox_derivs(t_s, e_s, x_s, b)
                ll += l_s
                g += g_s
                info += i_s
            return ll, g, info

        ll, g, info = derivs(beta)
        while True:
            gnorm = float(np.max(np.abs(g))) / n
            if gnorm <= tol:
                break
            if it == max_iter:
                raise FitError(f"{target} Cox model did not converge in {max_iter} iterations; "
                               f"final mean score sup-norm {gnorm:.3g}")
            try:
                step = np.linalg.solve(info, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(info, g, rcond=None)[0]
            for _ in range(MAX_HALVINGS + 1):
                cand = beta + step
                ll_c, g_c, info_c = derivs(cand)
                if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                    break
                step = step / 2
            beta, ll, g, info = cand, ll_c, g_c, info_c
            it += 1

    baseline = {}
    for s, t_s, e_s, x_s in groups:
        w = np.exp(x_s @ beta) if p else np.ones(t_s.size)
        rcum = np.cumsum(w[::-1])[::-1]
        jt = np.unique(t_s[e_s > 0])
        first = np.searchsorted(t_s, jt, side="left")
        last = np.searchsorted(t_s, jt, side="right")
        ce = np.concatenate([[0.0], np.cumsum(e_s)])
        d = ce[last] - ce[first]
        baseline[s] = (jt, d / rcum[first] if jt.size else np.zeros(0))
    return HazardFit(target, bool(stratify_by_treatment), cols, beta, center, baseline,
                     form, it, gnorm)


# ---------------------------------------------------------------------------
# outcome tail and missingness


@dataclass(frozen=True)
class OutcomeFit:
    """``G(y | a, l) = P(Y > y | T > t, A = a, L = l)`` at a fixed ``(t, y)``."""

    t: float
    y: float
    model: BinaryFit

    @property
    def link(self):
        return self.model.link

    @property
    def coefficients(self):
        return self.model.coefficients

    def predict(self, a, L):
        L = np.asarray(L, dtype=float)
        return self.model.predict(np.full(L.shape[0], a, dtype=float), L)

    def to_dict(self):
        return {"t": self.t, "y": self.y, **self.model.to_dict()}


def _survivor_rows(dataset, t):
    view = landmark_view(dataset, t, missingness="mar")
    return np.nonzero(view.alive_uncensored)[0], view


def fit_outcome(dataset: Dataset, t: float, y: float, design="main_interaction",
                link="probit") -> OutcomeFit:
    """Binary regression of ``I(Y > y)`` among subjects alive at ``t`` with the marker measured."""
    rows, view = _survivor_rows(dataset, t)
    rows = rows[view.marker_observed[rows] == 1]
    resp = (dataset.marker[rows] > y).astype(float)
    model = _fit_binary_model(dataset.treatment[rows], dataset.covariates[rows], resp,
                              design, link, "outcome model")
    return OutcomeFit(float(t), float(y), model)


@dataclass(frozen=True)
class MissingnessFit:
    t: float
    model: BinaryFit
    floor: float = 0.01

    @property
    def coefficients(self):
        return self.model.coefficients

    def predict(self, a, L):
        L = np.asarray(L, dtype=float)
        p = self.model.predict(np.broadcast_to(np.asarray(a, dtype=float), (L.shape[0],)), L)
        return np.clip(p, self.floor, 1.0)

    def to_dict(self):
        return {"t": self.t, **self.model.to_dict()}


def fit_missingness(dataset: Dataset, t: float, design="main_arm", floor=0.01) -> MissingnessFit:
    """Logistic regression of the marker-observed indicator on ``(A, L)`` among survivors."""
    rows, view = _survivor_rows(dataset, t)
    resp = view.marker_observed[rows].astype(float)
    if resp.size and np.all(resp == 1):
        return MissingnessFit(float(t), BinaryFit("logit", design, np.zeros(0), constant=1.0), floor)
    model = _fit_binary_model(dataset.treatment[rows], dataset.covariates[rows], resp,
                              design, "logit", "missingness model")
    return MissingnessFit(float(t), model, floor)


# ---------------------------------------------------------------------------
# learners and discrete super learner


@dataclass(frozen=True)
class FitContext:
    t: float
    y: float = 0.0
    floor: float = 0.01
    known_prob: float | None = None
    form: str = "product"


@dataclass(frozen=True)
class Learner:
    kind: str  # propensity | outcome | event | censoring | missingness
    name: str
    fit: Callable[[Dataset, FitContext], object]


LEARNERS: dict[tuple[str, str], Learner] = {}


def register_learner(kind, name, fit):
    """Make ``fit(dataset, ctx)`` available to :func:`cv_select` and learner libraries."""
    LEARNERS[(kind, name)] = Learner(kind, name, fit)
    return LEARNERS[(kind, name)]


def get_learner(kind, name) -> Learner:
    try:
        return LEARNERS[(kind, name)]
    except KeyError:
        known = sorted(n for k, n in LEARNERS if k == kind)
        raise KeyError(f"no {kind} learner named {name!r}; known: {known}") from None


register_learner("propensity", "known",
                 lambda d, c: fit_propensity(d, "known", c.known_prob, c.floor))
register_learner("propensity", "intercept",
                 lambda d, c: fit_propensity(d, "intercept", floor=c.floor))
register_learner("propensity", "logit",
                 lambda d, c: fit_propensity(d, "main", floor=c.floor))

register_learner("outcome", "intercept",
                 lambda d, c: fit_outcome(d, c.t, c.y, "intercept", "logit"))
register_learner("outcome", "arm",
                 lambda d, c: fit_outcome(d, c.t, c.y, "arm", "logit"))
for _link in ("logit", "probit"):
    register_learner("outcome", _link,
                     lambda d, c, _l=_link: fit_outcome(d, c.t, c.y, "main_interaction", _l))
    register_learner("outcome", f"{_link}_main",
                     lambda d, c, _l=_link: fit_outcome(d, c.t, c.y, "main_arm", _l))

for _target in ("event", "censoring"):
    register_learner(_target, "km",
                     lambda d, c, _t=_target: fit_hazard(d, _t, None, True, "product"))
    register_learner(_target, "km_pooled",
                     lambda d, c, _t=_target: fit_hazard(d, _t, None, False, "product"))
    register_learner(_target, "cox",
                     lambda d, c, _t=_target: fit_hazard(d, _t, "all", True, c.form))

register_learner("missingness", "intercept",
                 lambda d, c: fit_missingness(d, c.t, "intercept", c.floor))
register_learner("missingness", "logit",
                 lambda d, c: fit_missingness(d, c.t, "main_arm", c.floor))


def _nll(p, y):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _brier_at_t(fit: HazardFit, train: Dataset, test: Dataset, ctx: FitContext):
    # IPCW Brier score at t; weights from the arm-stratified KM of the opposite process
    target = fit.target
    other = "censoring" if target == "event" else "event"
    weight_fit = fit_hazard(train, other, None, True, "product")
    pred = np.empty(len(test))
    wt = np.empty(len(test))
    jumped = test.status == 1 if target == "event" else test.status == 0
    for a in (0, 1):
        rows = np.nonzero(test.treatment == a)[0]
        if rows.size == 0:
            continue
        L = test.covariates[rows]
        pred[rows] = fit.survival(a, L, ctx.t)
        tt = test.time[rows]
        # event target: weight K(T*-); censoring target: weight S(T*) (deaths first)
        w_at = weight_fit.survival(a, L, np.minimum(tt, ctx.t), inclusive=(target == "censoring"))
        w_t = weight_fit.survival(a, L, np.full(rows.size, ctx.t), inclusive=True)
        w = np.zeros(rows.size)
        early = (tt <= ctx.t) & jumped[rows]
        late = tt > ctx.t
        w[early] = 1.0 / np.maximum(w_at[early], ctx.floor)
        w[late] = 1.0 / np.maximum(w_t[late], ctx.floor)
        wt[rows] = w
    resid = np.where(test.time > ctx.t, 1.0 - pred, pred)
    return float(np.mean(wt * resid**2))


def held_out_loss(kind, fitted, train: Dataset, test: Dataset, ctx: FitContext) -> float:
    """Held-out loss used by :func:`cv_select` for each nuisance kind."""
    if kind == "propensity":
        return _nll(fitted.predict_raw(test.covariates), test.treatment.astype(float))
    if kind == "outcome":
        rows = np.nonzero((test.time > ctx.t) & (test.observed == 1))[0]
        if rows.size == 0:
            return 0.0
        p = fitted.model.predict(test.treatment[rows].astype(float), test.covariates[rows])
        return _nll(p, (test.marker[rows] > ctx.y).astype(float))
    if kind == "missingness":
        rows = np.nonzero(test.time > ctx.t)[0]
        if rows.size == 0:
            return 0.0
        p = fitted.model.predict(test.treatment[rows].astype(float), test.covariates[rows])
        return _nll(p, test.observed[rows].astype(float))
    if kind in ("event", "censoring"):
        return _brier_at_t(fitted, train, test, ctx)
    raise ValueError(f"unknown nuisance kind {kind!r}")


@dataclass
class Selection:
    index: int
    name: str
    fitted: object
    cv_loss: np.ndarray


def cv_select(candidates, dataset: Dataset, folds: int, ctx: FitContext, seed: int = 0,
              kind: str | None = None) -> Selection:
    """Discrete super learner: pick the candidate with least K-fold held-out loss.

    Candidates are :class:`Learner` objects (or names of registered learners
    of ``kind``). A single candidate is fitted on all data and returned
    unconditionally. Ties go to the lower index; a candidate failing on any
    fold gets infinite loss.
    """
    cands = [get_learner(kind, c) if isinstance(c, str) else c for c in candidates]
    if not cands:
        raise ValueError("no candidates")
    kind = kind or cands[0].kind
    if len(cands) == 1:
        return Selection(0, cands[0].name, cands[0].fit(dataset, ctx), np.zeros(1))
    if folds < 2:
        raise ValueError("cv_select needs at least 2 folds")
    labels = kfold_labels(len(dataset), folds, seed)
    losses = np.zeros(len(cands))
    for j, cand in enumerate(cands):
        total = 0.0
        for k in range(folds):
            train = dataset.subset(np.nonzero(labels != k)[0])
            test = dataset.subset(np.nonzero(labels == k)[0])
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NuisanceWarning)
                    fitted = cand.fit(train, ctx)
                total += held_out_loss(kind, fitted, train, test, ctx) * len(test)
            except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
                warnings.warn(f"{kind} learner {cand.name!r} failed on fold {k}: {exc}",
                              NuisanceWarning, stacklevel=2)
                total = np.inf
                break
        losses[j] = total / len(dataset)
    if not np.any(np.isfinite(losses)):
        raise FitError(f"every {kind} candidate failed during cross-validation")
    best = int(np.argmin(losses))  # first minimum: lower index wins ties
    return Selection(best, cands[best].name, cands[best].fit(dataset, ctx), losses)


# ---------------------------------------------------------------------------
# bundle


DEFAULT_LIBRARY = {
    "propensity": ("intercept", "logit"),
    "outcome": ("arm", "logit", "probit"),
    "event": ("km", "cox"),
    "censoring": ("km", "cox"),
    "missingness": ("intercept", "logit"),
}

PARAMETRIC_LIBRARY = {
    "propensity": ("logit",),
    "outcome": ("probit",),
    "event": ("cox",),
    "censoring": ("cox",),
    "missingness": ("logit",),
}


@dataclass(frozen=True)
class NuisanceBundle:
    propensity: PropensityFit
    event: HazardFit
    censoring: HazardFit
    outcome: OutcomeFit | None
    missingness: MissingnessFit | None = None
    floor: float = 0.01
    selected: dict = field(default_factory=dict)
    library: dict = field(default_factory=dict)
    cv_folds: int = 5
    seed: int = 0

    def with_outcome(self, dataset: Dataset, t: float, y: float) -> NuisanceBundle:
        """Refit only the outcome model at a new threshold with the same learner library."""
        names = self.library.get("outcome", PARAMETRIC_LIBRARY["outcome"])
        ctx = FitContext(t, y, self.floor)
        sel = cv_select(names, dataset, self.cv_folds, ctx, self.seed + 3, "outcome")
        selected = dict(self.selected, outcome=sel.name)
        return replace(self, outcome=sel.fitted, selected=selected)

    def to_json(self) -> str:
        return json.dumps({
            "propensity": self.propensity.to_dict(),
            "event": self.event.to_dict(),
            "censoring": self.censoring.to_dict(),
            "outcome": None if self.outcome is None else self.outcome.to_dict(),
            "missingness": None if self.missingness is None else self.missingness.to_dict(),
            "selected": self.selected,
            "floor": self.floor,
        }, sort_keys=True)


def fit_bundle(dataset: Dataset, t: float, y: float | None = None, library=None,
               floor=0.01, known_prob=None, form="product", mar=False,
               cv_folds=5, seed=0) -> NuisanceBundle:
    """Fit every nuisance, selecting among library candidates by cross-validation.

    ``library`` maps nuisance kind to candidate learner names; missing
    kinds fall back to :data:`PARAMETRIC_LIBRARY`. A known randomization
    probability overrides the propensity library.
    """
    lib = dict(PARAMETRIC_LIBRARY)
    lib.update(library or {})
    if known_prob is not None:
        lib["propensity"] = ("known",)
    ctx = FitContext(t, 0.0 if y is None else y, floor, known_prob, form)
    chosen = {}

    def pick(kind, offset):
        try:
            sel = cv_select(lib[kind], dataset, cv_folds, ctx, seed + offset, kind)
        except FitError as exc:
            raise FitError(f"{kind} model: {exc}") from None
        chosen[kind] = sel.name
        return sel.fitted

    propensity = pick("propensity", 0)
    event = pick("event", 1)
    censoring = pick("censoring", 2)
    outcome = pick("outcome", 3) if y is not None else None
    missingness = pick("missingness", 4) if mar else None
    return NuisanceBundle(propensity, event, censoring, outcome, missingness, floor,
                          chosen, {k: tuple(v) for k, v in lib.items()}, cv_folds, seed)
