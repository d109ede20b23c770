"""Standard errors, joint covariance, simplex summaries, confidence ellipses and tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .crossfit import crossfit_estimates
from .estimators import (EifSample, EstimateReport, contrast, linear_combination,
                         onestep_eta, report_from_se)


class InferenceWarning(UserWarning):
    pass


def se_ci(e: EifSample, level=0.95, ddof=1) -> EstimateReport:
    """Wald interval from the sample variance of the influence values.

    ``SE = sd(influence_values) / sqrt(n)`` with an ``n - ddof`` divisor.
    """
    n = e.n
    if n < 2:
        raise ValueError("se_ci needs n >= 2")
    v = e.influence_values
    scale = max(1.0, float(np.max(np.abs(v))))
    if abs(math.fsum(v.tolist()) / n) > 1e-8 * scale:
        warnings.warn(f"{e.estimand_label}: influence values do not average to zero "
                      f"(mean {np.mean(v):.3g})", InferenceWarning, stacklevel=2)
    se = float(np.std(v, ddof=ddof)) / math.sqrt(n)
    if se == 0.0:
        warnings.warn(f"{e.estimand_label}: zero variance, degenerate interval",
                      InferenceWarning, stacklevel=2)
    return report_from_se(e.point, se, level, e.estimand_label)


def joint_cov(samples) -> np.ndarray:
    """Covariance matrix of the estimates: sample covariance of influence values over ``n``."""
    ns = {s.n for s in samples}
    if len(ns) != 1:
        raise ValueError("influence samples differ in length (subject order mismatch)")
    n = ns.pop()
    M = np.vstack([s.influence_values for s in samples])
    return np.atleast_2d(np.cov(M, ddof=1)) / n


# ---------------------------------------------------------------------------
# simplex


@dataclass(frozen=True)
class SimplexSummary:
    """State occupation probabilities at the landmark time for one arm.

    ``Q1`` is alive with marker above the threshold, ``Q0`` alive with the
    marker at or below it, ``QD`` dead; ``cov`` is the covariance of the
    ``(Q1, QD)`` estimates.
    """

    arm: int
    q0: float
    q1: float
    qd: float
    cov: np.ndarray
    level: float = 0.95
    influence: np.ndarray | None = None  # (n, 2) influence values of (Q1, QD)

    def point(self):
        return np.array([self.q0, self.q1, self.qd])

    def to_dict(self):
        return {"arm": self.arm, "q0": self.q0, "q1": self.q1, "qd": self.qd,
                "cov_q1_qd": np.asarray(self.cov).tolist(), "level": self.level}


def simplex_point(eta: EifSample, surv: EifSample, level=0.95, arm: int = 1) -> SimplexSummary:
    """``(Q0, Q1, QD) = (S - eta, eta, 1 - S)`` with the covariance of ``(Q1, QD)``."""
    if eta.n != surv.n:
        raise ValueError("eta and survival estimates come from different samples")
    qd = EifSample("QD", 1.0 - surv.point, -surv.influence_values)
    q1 = eta.point
    q0 = 1.0 - q1 - qd.point
    if q1 > surv.point:
        warnings.warn(f"arm {arm}: eta exceeds survival; point lies outside the simplex "
                      "and will be clipped when rendered", InferenceWarning, stacklevel=2)
    cov = joint_cov([eta, qd])
    return SimplexSummary(arm, q0, q1, qd.point, cov, level,
                          np.column_stack([eta.influence_values, qd.influence_values]))


def chi2_quantile(level, df=2):
    return float(chi2.ppf(level, df))


def confidence_ellipse(summary: SimplexSummary, points: int = 256) -> np.ndarray:
    """Boundary of the Wald region for ``(Q1, QD)`` as ``(points, 3)`` barycentric rows ``(Q0, Q1, QD)``.

    The boundary solves ``(theta - theta_hat)' Sigma^-1 (theta - theta_hat) = c``
    with ``c`` the chi-square(2) quantile at the summary's level.
    """
    c = chi2_quantile(summary.level)
    center = np.array([summary.q1, summary.qd])
    Sigma = np.asarray(summary.cov, dtype=float)
    w, V = np.linalg.eigh(Sigma)
    ang = 2 * np.pi * np.arange(points) / points
    if w[0] <= 1e-14 * max(w[1], 1e-300):
        warnings.warn("singular covariance; confidence region is a segment",
                      InferenceWarning, stacklevel=2)
        w = np.maximum(w, 0.0)
    # x = center + sqrt(c) * V diag(sqrt(w)) (cos, sin)
    circle = np.vstack([np.cos(ang), np.sin(ang)])
    xy = center[:, None] + math.sqrt(c) * (V * np.sqrt(w)) @ circle
    q1, qd = xy
    return np.column_stack([1.0 - q1 - qd, q1, qd])


def polygon_area(xy) -> float:
    """Shoelace area of a closed polygon given as ``(m, 2)`` vertices."""
    x, y = np.asarray(xy, dtype=float).T
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_to_simplex(q):
    """Rendering-only projection of barycentric rows into the simplex; returns ``(rows, n_clipped)``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    bad = np.any(q < 0, axis=1)
    out = np.clip(q, 0.0, None)
    out = out / out.sum(axis=1, keepdims=True)
    return out, int(np.sum(bad))


# simplex drawing: Q0 lower-left, Q1 lower-right, QD top, in an 800x700 viewbox
SIDE = 600.0
VERTICES = np.array([[100.0, 620.0], [700.0, 620.0], [400.0, 620.0 - SIDE * math.sqrt(3) / 2]])


def barycentric_to_xy(q) -> np.ndarray:
    """Affine map of ``(Q0, Q1, QD)`` rows to drawing coordinates."""
    return np.atleast_2d(np.asarray(q, dtype=float)) @ VERTICES


# ---------------------------------------------------------------------------
# tests


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float

    def to_dict(self):
        return {"statistic": self.statistic, "df": self.df, "p": self.p_value}


def wald_p(statistic, df=2) -> float:
    return float(chi2.sf(statistic, df))


def wald_equality(s1: SimplexSummary, s0: SimplexSummary, cross_cov=None) -> WaldResult:
    """Test of equal ``(Q1, QD)`` in the two arms, retaining their covariance.

    ``cross_cov`` is ``Cov((Q1, QD) arm 1, (Q1, QD) arm 0)``; by default it
    is computed from the influence values carried by the summaries.
    """
    if cross_cov is None:
        if s1.influence is None or s0.influence is None:
            raise ValueError("cross-arm covariance needed")
        n = s1.influence.shape[0]
        M = np.column_stack([s1.influence, s0.influence]).T
        cross_cov = (np.cov(M, ddof=1) / n)[:2, 2:]
    C = np.asarray(cross_cov, dtype=float)
    d = np.array([s1.q1 - s0.q1, s1.qd - s0.qd])
    if not np.any(d):
        return WaldResult(0.0, 2, 1.0)
    V = np.asarray(s1.cov) + np.asarray(s0.cov) - C - C.T
    if np.linalg.matrix_rank(V) < 2 or np.linalg.cond(V) > 1e12:
        raise np.linalg.LinAlgError("Wald covariance is singular; test a single component "
                                    "or use a pooled test")
    W = float(d @ np.linalg.solve(V, d))
    W = max(W, 0.0)
    return WaldResult(W, 2, wald_p(W, 2))


@dataclass(frozen=True)
class UtilityResult:
    estimate: float
    std_error: float
    z: float
    p_value: float
    weight: float

    def to_dict(self):
        return {"estimate": self.estimate, "se": self.std_error, "z": self.z,
                "p_one_sided": self.p_value, "w": self.weight}


def utility_test(eta_contrast: EifSample, surv_contrast, w: float) -> UtilityResult:
    """One-sided test of ``w (S1 - S0) + (1 - w)(eta1 - eta0) <= 0``.

    ``surv_contrast`` is the ``S1 - S0`` sample or the pair ``(S1, S0)``.
    """
    if not 0 < w <= 1:
        raise ValueError("utility weight must lie in (0, 1]")
    if isinstance(surv_contrast, (tuple, list)):
        surv_contrast = contrast(*surv_contrast)
    comb = linear_combination([surv_contrast, eta_contrast], [w, 1.0 - w], "utility")
    se = float(np.std(comb.influence_values, ddof=1)) / math.sqrt(comb.n)
    if se == 0:
        z = 0.0 if comb.point == 0 else math.copysign(math.inf, comb.point)
    else:
        z = comb.point / se
    return UtilityResult(comb.point, se, z, float(norm.sf(z)), w)


def eta_curve(bundle, dataset, t, y_grid, level=0.95, config=None):
    """Pointwise one-step contrasts ``eta_1(y) - eta_0(y)`` over ``y_grid``.

    With a cross-fitting ``config`` the whole bundle is refit per fold and
    threshold; otherwise only the outcome model of ``bundle`` is refit.
    """
    if len(y_grid) == 0:
        raise ValueError("empty threshold grid")
    out = []
    for y in y_grid:
        if config is not None and config.folds > 1:
            res = crossfit_estimates(dataset, config, y)
            e1, e0 = res.onestep["eta1"], res.onestep["eta0"]
        else:
            mar = config is not None and config.missingness_mode == "mar"
            b = bundle.with_outcome(dataset, t, y)
            e1, e0 = onestep_eta(b, dataset, 1, t, y, mar), onestep_eta(b, dataset, 0, t, y, mar)
        out.append((float(y), se_ci(contrast(e1, e0, f"eta[y={y:g},t={t:g}]"), level)))
    return out
