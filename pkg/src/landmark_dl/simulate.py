"""Data-generating processes, truth oracles and the Monte Carlo runner.

Scenario parameters are stored as printed for the trial-calibrated Weibull
designs. Event-hazard intercepts are recalibrated per arm by root finding so
that the exact survival at the landmark time hits a stated target; the
calibration is returned as a log, never applied silently.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import norm

from .crossfit import crossfit_estimates
from .data import AnalysisConfig, Dataset
from .estimators import (EifSample, eif_from_terms, eta_terms, kaplan_meier,
                         surv_terms, unadjusted_eta_point)
from .inference import se_ci, simplex_point, wald_equality
from .nuisance import DEFAULT_LIBRARY, fit_bundle

log = logging.getLogger(__name__)

THREADS_ENV = "LANDMARK_DL_THREADS"
MAX_FAILURE_RATE = 0.01


# ---------------------------------------------------------------------------
# scenario specification


@dataclass(frozen=True)
class ScenarioSpec:
    """Weibull event/censoring design with a normal marker and two baseline covariates.

    ``L2 ~ Bernoulli(l2_prob)``, ``L1 | L2 ~ N(l1_mean[L2], l1_var[L2])``.
    Per arm ``a``: ``Y ~ N(b0 + b1 L1 + b2 L2c, var)`` from ``outcome[a]`` and
    ``Lambda_T(u) = exp(c0 + c1 L1 + c2 L2c) u^event_shape`` from ``event[a]``,
    where ``L2c = L2 - l2_prob`` when ``center_l2``. Censoring:
    ``Lambda_C(u | A) = exp(censor_intercept) (censor_time_scale u)^(censor_shape + censor_shape_slope A)``.
    ``propensity`` is a constant or logistic coefficients on ``(1, L1, L2)``.
    """

    name: str
    propensity: float | tuple[float, float, float] = 0.5
    l2_prob: float = 0.16
    l1_mean: tuple[float, float] = (46.0, 51.0)
    l1_var: tuple[float, float] = (225.0, 235.0)
    outcome: tuple = ((40.0, 0.90, 2.0, 140.0), (51.0, 0.86, 2.6, 148.0))
    event: tuple = ((-12.8, -0.023, -0.56), (-13.0, -0.020, -0.23))
    event_shape: float = 1.64
    censor_intercept: float = -20.0
    censor_shape: float = 2.7
    censor_shape_slope: float = 0.2
    censor_time_scale: float = 365.25
    landmark_t: float = 2.0
    threshold_y: float = 45.0
    time_unit: str = "years"
    center_l2: bool = True
    calibration_target: tuple[float, float] | None = None
    eta_target: tuple[float, float] | None = None
    censoring: bool = True

    def __post_init__(self):
        if not 0 < self.l2_prob < 1:
            raise ValueError("l2_prob must lie in (0, 1)")
        if min(self.l1_var) <= 0 or min(o[3] for o in self.outcome) <= 0:
            raise ValueError("variances must be positive")
        if self.event_shape <= 0 or self.censor_shape <= 0 or \
                self.censor_shape + self.censor_shape_slope <= 0:
            raise ValueError("Weibull shapes must be positive")
        if not isinstance(self.propensity, tuple) and not 0 < self.propensity < 1:
            raise ValueError("propensity must lie in (0, 1)")

    def l2c(self, L2):
        return L2 - self.l2_prob if self.center_l2 else L2

    def event_lp(self, a, L1, L2):
        c = self.event[a]
        return c[0] + c[1] * L1 + c[2] * self.l2c(L2)

    def outcome_mean(self, a, L1, L2):
        b = self.outcome[a]
        return b[0] + b[1] * L1 + b[2] * self.l2c(L2)

    def outcome_sd(self, a):
        return math.sqrt(self.outcome[a][3])

    def prop(self, L1, L2):
        if isinstance(self.propensity, tuple):
            g = self.propensity
            return expit(g[0] + g[1] * L1 + g[2] * L2)
        return np.full(np.shape(L1), float(self.propensity))

    def to_dict(self):
        return asdict(self)


SCENARIO_1 = ScenarioSpec("scenario1", calibration_target=(0.8735, 0.8931),
                          eta_target=(0.3598, 0.4232))
SCENARIO_2 = ScenarioSpec("scenario2", event=((-20.8, -0.83, -0.56), (-21.0, -0.75, -0.23)),
                          calibration_target=(0.7819, 0.8008), eta_target=(0.3889, 0.4497))
SCENARIO_3 = replace(SCENARIO_2, name="scenario3", propensity=(1.0, 0.025, -0.5))
SCENARIOS = {"1": SCENARIO_1, "2": SCENARIO_2, "3": SCENARIO_3}


def null_scenario(spec: ScenarioSpec) -> ScenarioSpec:
    """Both arms share the arm-0 laws (outcome, event and censoring), after calibration."""
    if spec.calibration_target is not None or spec.eta_target is not None:
        spec = calibrated(spec)
    return replace(spec, name=spec.name + "-null", outcome=(spec.outcome[0],) * 2,
                   event=(spec.event[0],) * 2, censor_shape_slope=0.0, calibration_target=None,
                   eta_target=None)


# ---------------------------------------------------------------------------
# exact truth by quadrature


def _l1_grid(spec, l2, m=8001, width=12.0):
    mu, sd = spec.l1_mean[l2], math.sqrt(spec.l1_var[l2])
    x = np.linspace(mu - width * sd, mu + width * sd, m)
    w = norm.pdf(x, mu, sd)
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w * (x[1] - x[0])


def _expect(spec, f):
    total = 0.0
    for l2, pl2 in ((0, 1 - spec.l2_prob), (1, spec.l2_prob)):
        x, w = _l1_grid(spec, l2)
        total += pl2 * float(np.dot(w, f(x, float(l2))))
    return total


def _cond_surv(spec, a, L1, L2, t):
    with np.errstate(over="ignore"):
        return np.exp(-np.exp(spec.event_lp(a, L1, L2)) * t ** spec.event_shape)


def exact_truth(spec: ScenarioSpec, t=None, y=None) -> dict:
    """``eta_a(y)``, ``S_a(t)`` and ``psi_a = E{Y I(T > t)}`` under each arm, by quadrature over ``L``."""
    t = spec.landmark_t if t is None else t
    y = spec.threshold_y if y is None else y
    out = {}
    for a in (0, 1):
        sd = spec.outcome_sd(a)
        out[f"S{a}"] = _expect(spec, lambda x, l2: _cond_surv(spec, a, x, l2, t))
        out[f"eta{a}"] = _expect(spec, lambda x, l2: _cond_surv(spec, a, x, l2, t)
                                 * norm.sf((y - spec.outcome_mean(a, x, l2)) / sd))
        out[f"psi{a}"] = _expect(spec, lambda x, l2: _cond_surv(spec, a, x, l2, t)
                                 * spec.outcome_mean(a, x, l2))
    out["psi"] = out["psi1"] - out["psi0"]
    return out


def calibrate(spec: ScenarioSpec, target=None, t=None, eta_target=None):
    """Shift per-arm intercepts so exact truths hit stated targets.

    The event intercept of arm ``a`` is solved so that ``S_a(t) = target[a]``;
    then, if ``eta_target`` is set, the outcome intercept is solved so that
    ``eta_a(y) = eta_target[a]``. Returns ``(calibrated_spec, log)``; the log
    records original and calibrated intercepts and the achieved values.
    """
    target = target or spec.calibration_target
    eta_target = eta_target or spec.eta_target
    if target is None and eta_target is None:
        return spec, {}
    t = spec.landmark_t if t is None else t
    y = spec.threshold_y
    record = {"t": t, "y": y, "arms": []}
    event, outcome = list(spec.event), list(spec.outcome)

    def with_arm(seq, a, b0):
        return tuple((b0, *seq[k][1:]) if k == a else seq[k] for k in (0, 1))

    for a in (0, 1):
        entry = {"arm": a}
        if target is not None:
            def gap(b0, a=a):
                s = replace(spec, event=with_arm(event, a, b0))
                return _expect(s, lambda x, l2: _cond_surv(s, a, x, l2, t)) - target[a]
            b0 = brentq(gap, -200.0, 200.0, xtol=1e-12)
            entry.update(event_original=event[a][0], event_calibrated=b0, S_target=target[a])
            event[a] = (b0, *event[a][1:])
        if eta_target is not None:
            sd = spec.outcome_sd(a)

            def gap_eta(b0, a=a):
                s = replace(spec, event=tuple(event), outcome=with_arm(outcome, a, b0))
                return _expect(s, lambda x, l2: _cond_surv(s, a, x, l2, t) * norm.sf(
                    (y - s.outcome_mean(a, x, l2)) / sd)) - eta_target[a]
            b0 = brentq(gap_eta, -500.0, 500.0, xtol=1e-12)
            entry.update(outcome_original=outcome[a][0], outcome_calibrated=b0,
                         eta_target=eta_target[a])
            outcome[a] = (b0, *outcome[a][1:])
        record["arms"].append(entry)
    out = replace(spec, event=tuple(event), outcome=tuple(outcome),
                  calibration_target=None, eta_target=None)
    truth = exact_truth(out, t, y)
    record["achieved"] = {k: truth[k] for k in ("S0", "S1", "eta0", "eta1")}
    log.info("calibrated %s: %s", spec.name, record)
    return out, record


@lru_cache(maxsize=None)
def calibrated(spec: ScenarioSpec) -> ScenarioSpec:
    return calibrate(spec)[0]


# ---------------------------------------------------------------------------
# sampling


def make_rng(root: int, index: int | None = None) -> np.random.Generator:
    """Counter-based stream for replicate ``index`` of root seed ``root``."""
    ss = np.random.SeedSequence(root) if index is None else \
        np.random.SeedSequence(root, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _weibull_inverse(E, lp, shape):
    # solve exp(lp) T^shape = E
    with np.errstate(over="ignore", divide="ignore"):
        return np.exp((np.log(E) - lp) / shape)


def sample_full(spec: ScenarioSpec, n: int, rng, arm=None):
    """Full data: ``L1, L2, A, T, C, Y`` (``Y`` drawn for everyone)."""
    L2 = (rng.random(n) < spec.l2_prob).astype(float)
    mu = np.where(L2 == 1, spec.l1_mean[1], spec.l1_mean[0])
    sd = np.sqrt(np.where(L2 == 1, spec.l1_var[1], spec.l1_var[0]))
    L1 = mu + sd * rng.standard_normal(n)
    if arm is None:
        A = (rng.random(n) < spec.prop(L1, L2)).astype(np.int8)
    else:
        A = np.full(n, arm, dtype=np.int8)
    lp = np.where(A == 1, spec.event_lp(1, L1, L2), spec.event_lp(0, L1, L2))
    T = _weibull_inverse(rng.standard_exponential(n), lp, spec.event_shape)
    if spec.censoring:
        k = spec.censor_shape + spec.censor_shape_slope * A
        C = _weibull_inverse(rng.standard_exponential(n), spec.censor_intercept, k) \
            / spec.censor_time_scale
    else:
        C = np.full(n, np.inf)
    ymu = np.where(A == 1, spec.outcome_mean(1, L1, L2), spec.outcome_mean(0, L1, L2))
    ysd = np.where(A == 1, spec.outcome_sd(1), spec.outcome_sd(0))
    Y = ymu + ysd * rng.standard_normal(n)
    return L1, L2, A, T, C, Y


def sample_scenario(spec: ScenarioSpec, n: int, rng) -> Dataset:
    """Observed data: follow-up ``min(T, C)``, event indicator, marker only if alive and uncensored at t."""
    L1, L2, A, T, C, Y = sample_full(spec, n, rng)
    time = np.minimum(T, C)
    status = (T <= C).astype(np.int8)
    marker = np.where(time > spec.landmark_t, Y, np.nan)
    return Dataset.from_arrays(time, status, A, np.column_stack([L1, L2]), marker,
                               covariate_names=("L1", "L2"))


_ORACLE_CACHE: dict = {}


def oracle_truth(spec: ScenarioSpec, t=None, y=None, N=1_000_000, seed=0) -> dict:
    """Brute-force potential-outcome Monte Carlo truth with standard errors (cached)."""
    t = spec.landmark_t if t is None else t
    y = spec.threshold_y if y is None else y
    key = (spec, t, y, N, seed)
    if key in _ORACLE_CACHE:
        return _ORACLE_CACHE[key]
    out = {}
    for a in (0, 1):
        L1, L2, A, T, C, Y = sample_full(replace(spec, censoring=False), N, make_rng(seed, a), arm=a)
        alive = T > t
        for name, v in ((f"S{a}", alive.astype(float)), (f"eta{a}", (alive & (Y > y)).astype(float)),
                        (f"psi{a}", np.where(alive, Y, 0.0))):
            out[name] = float(np.mean(v))
            out[name + "_se"] = float(np.std(v, ddof=1) / math.sqrt(N))
    out["psi"] = out["psi1"] - out["psi0"]
    out["psi_se"] = math.hypot(out["psi1_se"], out["psi0_se"])
    _ORACLE_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# Monte Carlo


ESTIMANDS = ("eta0", "eta1", "S0", "S1")
METHODS = ("onestep", "unadjusted", "plugin")
COLUMNS = ("Mean", "Bias", "SE", "SD", "SE/SD", "Coverage", "Rel.eff")


def scenario_config(spec: ScenarioSpec, **overrides) -> AnalysisConfig:
    """Estimator configuration used for a scenario's Monte Carlo study.

    Randomized designs use the known propensity, arm-stratified Cox models
    and a probit outcome model with treatment interactions; the observational
    design uses cross-validated learner selection and 5-fold cross-fitting.
    """
    if isinstance(spec.propensity, tuple):
        kw = dict(folds=5, learner_library=dict(DEFAULT_LIBRARY), survival_form="exponential")
    else:
        kw = dict(known_randomization_prob=float(spec.propensity),
                  learner_library={"event": ("cox",), "censoring": ("cox",), "outcome": ("probit",)},
                  survival_form="product" if spec.name.startswith("scenario1") else "exponential")
    kw.update(overrides)
    return AnalysisConfig(landmark_t=spec.landmark_t, threshold_y=spec.threshold_y, **kw)


@dataclass(frozen=True)
class MCTask:
    spec: ScenarioSpec
    n: int
    config: AnalysisConfig
    root: int
    kind: str = "estimates"  # estimates | wald


def _replicate_estimates(task: MCTask, r: int):
    ds = sample_scenario(task.spec, task.n, make_rng(task.root, r))
    cfg = task.config
    res = crossfit_estimates(ds, cfg)
    t, y = cfg.landmark_t, cfg.y_grid[0]
    row = {}
    for key in ESTIMANDS:
        e = res.onestep[key]
        row[f"{key}/onestep"] = e.point
        row[f"{key}/se"] = se_ci(e).std_error
        row[f"{key}/plugin"] = res.plugin[key]
    for a in (0, 1):
        row[f"eta{a}/unadjusted"] = unadjusted_eta_point(ds, a, t, y)
        arm = ds.treatment == a
        row[f"S{a}/unadjusted"] = kaplan_meier(ds.time[arm], ds.status[arm], t)[0]
        # estimated covariance of (eta_a, S_a) for the joint-covariance check
        ea, sa = res.onestep[f"eta{a}"].influence_values, res.onestep[f"S{a}"].influence_values
        row[f"cov_eta{a}_S{a}"] = float(np.cov(ea, sa, ddof=1)[0, 1] / len(ds))
    row["floor_hits"] = float(res.floor_hits)
    return row


def _replicate_wald(task: MCTask, r: int):
    ds = sample_scenario(task.spec, task.n, make_rng(task.root, r))
    res = crossfit_estimates(ds, task.config)
    e = res.onestep
    s1 = simplex_point(e["eta1"], e["S1"], arm=1)
    s0 = simplex_point(e["eta0"], e["S0"], arm=0)
    w = wald_equality(s1, s0)
    return {"W": w.statistic, "p": w.p_value}


def _run_chunk(task: MCTask, indices):
    fn = _replicate_wald if task.kind == "wald" else _replicate_estimates
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in indices:
            try:
                out.append((r, fn(task, r), None))
            except Exception as exc:  # replicate failures are counted, not fatal
                out.append((r, None, f"{type(exc).__name__}: {exc}"))
    return out


def default_workers() -> int:
    v = os.environ.get(THREADS_ENV)
    if v:
        return max(1, int(v))
    return 1


def run_replicates(task: MCTask, reps: int, workers: int | None = None, chunk: int = 25):
    """Run replicates ``0..reps-1``; results ordered by replicate index regardless of workers."""
    workers = default_workers() if workers is None else max(1, int(workers))
    chunks = [range(i, min(i + chunk, reps)) for i in range(0, reps, chunk)]
    if workers == 1:
        parts = [_run_chunk(task, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [task] * len(chunks), chunks))
    rows, errors = [None] * reps, {}
    for part in parts:
        for r, row, err in part:
            rows[r] = row
            if err:
                errors[r] = err
    return rows, errors


@dataclass
class MonteCarloReport:
    """Table of Mean, Bias, SE, SD, SE/SD, Coverage and Rel.eff per (estimand, method).

    ``raw`` holds the per-replicate columns (failed replicates removed).
    """

    scenario: str
    n: int
    reps: int
    seed: int
    truth: dict
    rows: dict
    failures: int = 0
    failure_messages: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)

    def row(self, estimand, method="onestep"):
        return self.rows[(estimand, method)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimand", "method", *COLUMNS])
        for (est, meth), vals in self.rows.items():
            w.writerow([est, meth, *(_fmt(vals.get(c)) for c in COLUMNS)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_table(self) -> str:
        names = {"eta0": "eta_0(y)", "eta1": "eta_1(y)", "S0": "S_0", "S1": "S_1"}
        head = f"{'':24s}" + "".join(f"{c:>10s}" for c in COLUMNS)
        lines = [f"{self.scenario}: n={self.n}, reps={self.reps} (failed {self.failures}), "
                 f"seed={self.seed}", head]
        for (est, meth), vals in self.rows.items():
            label = names[est] + ("" if meth == "onestep" else f" {meth[:5]}.")
            cells = "".join(f"{_fmt(vals.get(c)):>10s}" for c in COLUMNS)
            lines.append(f"{label:24s}{cells}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.4f}"


def _sum_mean(x):
    return math.fsum(x.tolist()) / x.size


def aggregate(raw: dict, truth: dict, level=0.95, methods=METHODS) -> dict:
    z = norm.ppf(0.5 + level / 2)
    rows = {}
    for est in ESTIMANDS:
        sd_os = float(np.std(raw[f"{est}/onestep"], ddof=1))
        for meth in methods:
            x = raw[f"{est}/{meth}"]
            mean = _sum_mean(x)
            sd = float(np.std(x, ddof=1))
            r = {"Mean": mean, "Bias": mean - truth[est], "SD": sd,
                 "Rel.eff": sd / sd_os if sd_os > 0 else float("nan")}
            if meth == "onestep":
                se = raw[f"{est}/se"]
                r["SE"] = _sum_mean(se)
                r["SE/SD"] = r["SE"] / sd if sd > 0 else float("nan")
                r["Coverage"] = float(np.mean(np.abs(x - truth[est]) <= z * se))
            rows[(est, meth)] = r
    return rows


def _check_failures(errors, reps):
    if len(errors) > MAX_FAILURE_RATE * reps:
        first = next(iter(errors.values()))
        raise RuntimeError(f"{len(errors)} of {reps} replicates failed (limit "
                           f"{MAX_FAILURE_RATE:.0%}); first error: {first}")


def run_mc(spec: ScenarioSpec, n: int, reps: int, config: AnalysisConfig | None = None,
           rng_root: int = 0, workers: int | None = None, methods=METHODS) -> MonteCarloReport:
    """Monte Carlo study of the one-step, unadjusted and plug-in estimators.

    Bias and coverage are measured against the exact (quadrature) truth.
    Output is identical for any number of workers.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    cal_log = {}
    if spec.calibration_target is not None or spec.eta_target is not None:
        spec, cal_log = calibrate(spec)
    config = config or scenario_config(spec)
    truth = exact_truth(spec, config.landmark_t, config.y_grid[0])
    rows, errors = run_replicates(MCTask(spec, n, config, rng_root), reps, workers)
    _check_failures(errors, reps)
    ok = [r for r in rows if r is not None]
    raw = {k: np.array([r[k] for r in ok]) for k in ok[0]}
    return MonteCarloReport(spec.name, n, reps, rng_root, truth, aggregate(raw, truth, config.level, methods),
                            len(errors), errors, raw, cal_log)


def run_wald_size(spec: ScenarioSpec, n: int, reps: int, config=None, rng_root=0,
                  workers=None, alpha=0.05):
    """Rejection rate of the two-arm Wald equality test; returns ``(rate, raw)``."""
    config = config or scenario_config(spec)
    rows, errors = run_replicates(MCTask(spec, n, config, rng_root, "wald"), reps, workers)
    _check_failures(errors, reps)
    p = np.array([r["p"] for r in rows if r is not None])
    return float(np.mean(p < alpha)), p


# ---------------------------------------------------------------------------
# counterexample: survival benefit with a harmful joint-probability effect


@dataclass(frozen=True)
class CounterexampleReport:
    z1: float
    z2: float
    t: float
    survival_ratio: float
    selection_probability: float
    joint_factor: float
    simulated: dict | None = None

    def to_dict(self):
        return asdict(self)


def counterexample_scenario(z1: float, z2: float, t: float, n: int = 0, seed: int = 0):
    """Closed forms for the two-type frailty example and, if ``n > 0``, simulated estimates.

    ``Z`` is ``z1`` or ``z2`` with probability 1/2; hazard 1 under control
    and ``Z`` under treatment; the marker of a survivor is ``Z``. Estimates
    are covariate-free one-step estimates with delta-method standard errors.
    """
    if not (0 < z1 < 1 < z2):
        raise ValueError("the example requires 0 < z1 < 1 < z2")
    if not t > math.log(2) / (1 - z1):
        raise ValueError("the example requires t > log(2) / (1 - z1)")
    ratio = 0.5 * math.exp((1 - z1) * t) + 0.5 * math.exp((1 - z2) * t)
    select = 1.0 / (1.0 + math.exp((z2 - z1) * t))
    joint = (math.exp((1 - z2) * t) + math.exp((1 - z1) * t)) / (1 + math.exp((z2 - z1) * t))
    sim = None
    if n > 0:
        sim = _simulate_counterexample(z1, z2, t, n, seed)
    return CounterexampleReport(z1, z2, t, ratio, select, joint, sim)


def sample_counterexample(z1, z2, t, n, rng) -> Dataset:
    Z = np.where(rng.random(n) < 0.5, z1, z2)
    A = (rng.random(n) < 0.5).astype(np.int8)
    rate = np.where(A == 1, Z, 1.0)
    T = rng.standard_exponential(n) / rate
    marker = np.where(T > t, Z, np.nan)
    return Dataset.from_arrays(T, np.ones(n), A, None, marker)


def _ratio(num: EifSample, den: EifSample, label):
    r = num.point / den.point
    infl = (num.influence_values - r * den.influence_values) / den.point
    return EifSample(label, r, infl)


def _simulate_counterexample(z1, z2, t, n, seed):
    ds = sample_counterexample(z1, z2, t, n, make_rng(seed))
    ystar = 0.5 * (z1 + z2)
    b = fit_bundle(ds, t, ystar, library={"propensity": ("intercept",), "event": ("km",),
                                          "censoring": ("km",), "outcome": ("arm",)})
    est = {}
    for a in (0, 1):
        est[f"eta{a}"] = eif_from_terms(f"eta{a}", *eta_terms(b, ds, a, t, ystar))
        est[f"S{a}"] = eif_from_terms(f"S{a}", *surv_terms(b, ds, a, t))
    out = {}
    for name, e in (("survival_ratio", _ratio(est["S1"], est["S0"], "ratio")),
                    ("selection_probability", _ratio(est["eta1"], est["S1"], "select")),
                    ("joint_factor", _ratio(est["eta1"], est["eta0"], "joint"))):
        rep = se_ci(e)
        out[name] = {"estimate": rep.estimate, "se": rep.std_error}
    return out
