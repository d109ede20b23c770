"""K-fold cross-fitting of the nuisance bundle and out-of-fold one-step estimation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._folds import kfold_labels
from .data import AnalysisConfig, Dataset, landmark_view
from .estimators import (EifSample, eif_from_terms, eta_label, eta_terms, surv_label,
                         surv_terms, _mean, _warn_floor)
from .nuisance import FitError, NuisanceBundle, fit_bundle


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    K: int
    fold_of: np.ndarray
    seed: int
    strata_key: np.ndarray | None = None

    def held_out(self, k):
        return np.nonzero(self.fold_of == k)[0]

    def training(self, k):
        return np.nonzero(self.fold_of != k)[0]

    def sizes(self):
        return np.bincount(self.fold_of, minlength=self.K)

    def to_csv(self, path, ids=None):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "fold"])
            for i in range(self.n):
                w.writerow([i + 1 if ids is None else ids[i], int(self.fold_of[i])])


def make_folds(dataset: Dataset, K: int, seed: int, stratify="by-treatment-and-delta",
               t: float | None = None) -> FoldAssignment:
    """Seeded fold assignment, optionally balancing the ``(A, Delta_t)`` cells.

    Stratification needs the landmark time ``t``; if some cell has fewer
    than ``K`` members the split falls back to unstratified with a warning.
    """
    n = len(dataset)
    if K < 2:
        raise ValueError("cross-fitting needs K >= 2")
    if K > n:
        raise ValueError(f"cannot split {n} subjects into {K} folds")
    strata = None
    if stratify not in (None, "none"):
        if t is None:
            raise ValueError("stratified folds need the landmark time")
        delta_t = np.where(dataset.time > t, 1, dataset.status)
        strata = 2 * dataset.treatment.astype(np.int64) + delta_t
        counts = np.bincount(strata, minlength=4)
        if np.any((counts > 0) & (counts < K)):
            warnings.warn("a (treatment, delta_t) cell has fewer members than folds; "
                          "using unstratified folds", UserWarning, stacklevel=2)
            strata = None
    return FoldAssignment(n, K, kfold_labels(n, K, seed, strata), seed, strata)


@dataclass
class CrossfitResult:
    """One-step estimates of ``eta_a(y)`` and ``S_a(t)`` for both arms, plus plug-in points."""

    onestep: dict
    plugin: dict
    folds: FoldAssignment | None
    bundles: list = field(default_factory=list)
    training_sets: list = field(default_factory=list)
    floor_hits: int = 0


def _bundle_args(config: AnalysisConfig, y, seed):
    return dict(t=config.landmark_t, y=y, library=dict(config.learner_library),
                floor=config.positivity_floor, known_prob=config.known_randomization_prob,
                form=config.survival_form, mar=config.missingness_mode == "mar", seed=seed)


def _evaluate(bundle: NuisanceBundle, data: Dataset, config: AnalysisConfig, y):
    t = config.landmark_t
    mar = config.missingness_mode == "mar"
    out = {}
    for a in (0, 1):
        out[f"eta{a}"] = eta_terms(bundle, data, a, t, y, mar)
        out[f"S{a}"] = surv_terms(bundle, data, a, t)
    return out


def crossfit_estimates(dataset: Dataset, config: AnalysisConfig, y: float | None = None,
                       folds: FoldAssignment | None = None) -> CrossfitResult:
    """Estimate ``eta_0(y), eta_1(y), S_0(t), S_1(t)`` with ``config.folds``-fold cross-fitting.

    With ``folds = 1`` the nuisances are fitted once on all data and the
    result is identical to calling the estimators directly.
    """
    y = config.y_grid[0] if y is None else y
    t = config.landmark_t
    landmark_view(dataset, t, y, config.missingness_mode)  # validate before any fitting
    labels = {"eta0": eta_label(0, t, y), "eta1": eta_label(1, t, y),
              "S0": surv_label(0, t), "S1": surv_label(1, t)}
    n = len(dataset)
    if config.folds == 1:
        try:
            bundle = fit_bundle(dataset, **_bundle_args(config, y, config.seed))
        except FitError as exc:
            raise FitError(f"full-sample fit: {exc}") from None
        terms = _evaluate(bundle, dataset, config, y)
        bundles, training, assign = [bundle], [np.arange(n)], None
    else:
        assign = folds or make_folds(dataset, config.folds, config.seed,
                                     "by-treatment-and-delta" if config.stratify_folds else "none", t)
        terms = {k: (np.empty(n), np.empty(n), 0) for k in labels}
        bundles, training = [], []
        for k in range(assign.K):
            train_idx, test_idx = assign.training(k), assign.held_out(k)
            try:
                # inner cv seed keyed to the fold's content, not its label
                inner = config.seed + 7919 * (int(test_idx[0]) + 1)
                bundle = fit_bundle(dataset.subset(train_idx), **_bundle_args(config, y, inner))
            except FitError as exc:
                raise FitError(f"fold {k}: {exc}") from None
            part = _evaluate(bundle, dataset.subset(test_idx), config, y)
            for key, (plug, deb, hits) in part.items():
                P, D, H = terms[key]
                P[test_idx] = plug
                D[test_idx] = deb
                terms[key] = (P, D, H + hits)
            bundles.append(bundle)
            training.append(train_idx)
    onestep, plugin, hits = {}, {}, 0
    for key, (plug, deb, h) in terms.items():
        onestep[key] = eif_from_terms(labels[key], plug, deb, h)
        plugin[key] = _mean(plug)
        hits += h
    _warn_floor(hits)
    return CrossfitResult(onestep, plugin, assign, bundles, training, hits)


def crossfit_onestep(dataset: Dataset, config: AnalysisConfig, estimand) -> EifSample:
    """Single estimand: ``("eta", a, y)`` or ``("surv", a, u)`` with ``u`` the landmark time."""
    kind, a = estimand[0], int(estimand[1])
    if kind == "eta":
        return crossfit_estimates(dataset, config, estimand[2]).onestep[f"eta{a}"]
    if kind == "surv":
        if len(estimand) > 2 and estimand[2] != config.landmark_t:
            config = replace(config, landmark_t=float(estimand[2]))
        return crossfit_estimates(dataset, config).onestep[f"S{a}"]
    raise ValueError(f"unknown estimand {kind!r}")
