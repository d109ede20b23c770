"""Subject records, CSV ingestion and the landmark-time view of a dataset."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Base class for input problems (CLI exit code 2)."""


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    followup_time: float
    event_indicator: int
    treatment: int
    covariates: tuple[float, ...] = ()
    marker: float | None = None
    marker_observed: int | None = None

    def __post_init__(self):
        if not self.followup_time >= 0:
            raise ValidationError(f"subject {self.id}: negative or missing follow-up time", [self.id])
        if self.event_indicator not in (0, 1):
            raise ValidationError(f"subject {self.id}: status must be 0 or 1", [self.id])
        if self.treatment not in (0, 1):
            raise ValidationError(f"subject {self.id}: treatment must be 0 or 1", [self.id])
        if self.marker is not None and self.marker_observed == 0:
            raise ValidationError(f"subject {self.id}: marker present but flagged unobserved", [self.id])
        if self.marker_observed is None:
            object.__setattr__(self, "marker_observed", 1 if self.marker is not None else 0)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, validated collection of subjects.

    ``marker`` holds NaN where the marker was not measured; ``observed`` is
    the R indicator (1 when the marker is present).
    """

    ids: np.ndarray
    time: np.ndarray
    status: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    marker: np.ndarray
    observed: np.ndarray
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.time.shape[0]
        cov = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        object.__setattr__(self, "covariates", cov)
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names",
                               tuple(f"L{j + 1}" for j in range(cov.shape[1])))
        for name in ("ids", "time", "status", "treatment", "marker", "observed"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValidationError(f"column {name} has length {arr.shape[0]}, expected {n}")
            arr.setflags(write=False)
        cov.setflags(write=False)
        _validate_columns(self)

    @classmethod
    def from_arrays(cls, time, status, treatment, covariates=None, marker=None,
                    observed=None, ids=None, covariate_names=()):
        time = np.asarray(time, dtype=float)
        n = time.shape[0]
        if covariates is None:
            covariates = np.zeros((n, 0))
        marker = np.full(n, np.nan) if marker is None else np.asarray(marker, dtype=float).copy()
        if observed is None:
            observed = (~np.isnan(marker)).astype(np.int8)
        if ids is None:
            ids = np.array([str(i + 1) for i in range(n)], dtype=object)
        return cls(
            ids=np.asarray(ids, dtype=object),
            time=time.copy(),
            status=np.asarray(status).astype(np.int8),
            treatment=np.asarray(treatment).astype(np.int8),
            covariates=np.array(covariates, dtype=float).reshape(n, -1),
            marker=marker,
            observed=np.asarray(observed).astype(np.int8),
            covariate_names=tuple(covariate_names),
        )

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], covariate_names=()):
        if not records:
            raise ValidationError("empty dataset")
        dims = {len(r.covariates) for r in records}
        if len(dims) != 1:
            raise ValidationError("records disagree on covariate dimension")
        p = dims.pop()
        return cls.from_arrays(
            time=[r.followup_time for r in records],
            status=[r.event_indicator for r in records],
            treatment=[r.treatment for r in records],
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
            marker=[np.nan if r.marker is None else r.marker for r in records],
            observed=[r.marker_observed for r in records],
            ids=[r.id for r in records],
            covariate_names=covariate_names,
        )

    def records(self) -> list[SubjectRecord]:
        out = []
        for i in range(len(self)):
            m = self.marker[i]
            out.append(SubjectRecord(
                id=str(self.ids[i]),
                followup_time=float(self.time[i]),
                event_indicator=int(self.status[i]),
                treatment=int(self.treatment[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
                marker=None if math.isnan(m) else float(m),
                marker_observed=int(self.observed[i]),
            ))
        return out

    def __len__(self):
        return self.time.shape[0]

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            ids=self.ids[idx], time=self.time[idx], status=self.status[idx],
            treatment=self.treatment[idx], covariates=self.covariates[idx],
            marker=self.marker[idx], observed=self.observed[idx],
            covariate_names=self.covariate_names,
        )

    def equals(self, other: Dataset) -> bool:
        return (
            self.covariate_names == other.covariate_names
            and np.array_equal(self.ids.astype(str), other.ids.astype(str))
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.marker, other.marker, equal_nan=True)
            and np.array_equal(self.observed, other.observed)
        )


def _validate_columns(ds: Dataset):
    bad = np.nonzero(~(ds.time >= 0))[0]
    if bad.size:
        raise ValidationError(f"negative or missing follow-up time for ids {_ids(ds, bad)}", ds.ids[bad])
    bad = np.nonzero(~np.isin(ds.status, (0, 1)))[0]
    if bad.size:
        raise ValidationError(f"status not in {{0,1}} for ids {_ids(ds, bad)}", ds.ids[bad])
    bad = np.nonzero(~np.isin(ds.treatment, (0, 1)))[0]
    if bad.size:
        raise ValidationError(f"treatment not in {{0,1}} for ids {_ids(ds, bad)}", ds.ids[bad])
    if not np.all(np.isfinite(ds.covariates)):
        rows = np.nonzero(~np.all(np.isfinite(ds.covariates), axis=1))[0]
        raise ValidationError(f"non-finite covariates for ids {_ids(ds, rows)}", ds.ids[rows])
    bad = np.nonzero(~np.isnan(ds.marker) & (ds.observed != 1))[0]
    if bad.size:
        raise ValidationError(f"marker present but flagged unobserved for ids {_ids(ds, bad)}", ds.ids[bad])
    bad = np.nonzero(np.isnan(ds.marker) & (ds.observed == 1))[0]
    if bad.size:
        raise ValidationError(f"marker flagged observed but empty for ids {_ids(ds, bad)}", ds.ids[bad])


def _ids(ds, idx, limit=10):
    shown = ", ".join(str(v) for v in ds.ids[idx[:limit]])
    return shown + (" ..." if idx.size > limit else "")


# ---------------------------------------------------------------------------
# CSV


DEFAULT_COLUMNS = {"id": "id", "time": "time", "status": "status",
                   "marker": "marker", "treatment": "treatment", "r": "r"}


def ingest_csv(path, schema: Mapping | None = None) -> Dataset:
    """Read and validate a subject-level CSV file.

    ``schema`` maps the roles ``id, time, status, marker, treatment, r`` to
    column names and may list ``covariates`` explicitly; by default every
    column not claimed by a role is a covariate, in file order. An empty
    marker cell means the marker was not measured.
    """
    cols = dict(DEFAULT_COLUMNS)
    if schema:
        cols.update({k: v for k, v in schema.items() if k != "covariates"})
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    for role in ("time", "status", "treatment"):
        if cols[role] not in header:
            raise SchemaError(f"{path}: required column '{cols[role]}' ({role}) missing")
    pos = {h: j for j, h in enumerate(header)}
    claimed = {cols[k] for k in DEFAULT_COLUMNS}
    if schema and "covariates" in schema:
        cov_names = list(schema["covariates"])
        missing = [c for c in cov_names if c not in pos]
        if missing:
            raise SchemaError(f"{path}: covariate columns missing: {missing}")
    else:
        cov_names = [h for h in header if h not in claimed]

    n = len(rows)
    ids = np.empty(n, dtype=object)
    time = np.empty(n)
    status = np.empty(n, dtype=np.int8)
    treat = np.empty(n, dtype=np.int8)
    marker = np.full(n, np.nan)
    observed = np.zeros(n, dtype=np.int8)
    cov = np.empty((n, len(cov_names)))
    has_r = cols["r"] in pos
    has_marker = cols["marker"] in pos
    errors = []
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            errors.append((line, f"expected {len(header)} fields, got {len(row)}"))
            continue
        rid = row[pos[cols["id"]]].strip() if cols["id"] in pos else str(i + 1)
        try:
            time[i] = _num(row[pos[cols["time"]]], "time")
            if time[i] < 0:
                raise ValueError("negative time")
            status[i] = _binary(row[pos[cols["status"]]], "status")
            treat[i] = _binary(row[pos[cols["treatment"]]], "treatment")
            for j, c in enumerate(cov_names):
                cov[i, j] = _num(row[pos[c]], c)
            if has_marker and row[pos[cols["marker"]]].strip() != "":
                marker[i] = _num(row[pos[cols["marker"]]], "marker")
            if has_r and row[pos[cols["r"]]].strip() != "":
                observed[i] = _binary(row[pos[cols["r"]]], "r")
            else:
                observed[i] = 0 if math.isnan(marker[i]) else 1
        except ValueError as exc:
            errors.append((line, f"id {rid}: {exc}"))
            continue
        ids[i] = rid
    if errors:
        msg = "; ".join(f"row {line}: {m}" for line, m in errors[:20])
        raise ValidationError(f"{path}: {len(errors)} invalid row(s): {msg}", [e[0] for e in errors])
    return Dataset.from_arrays(time, status, treat, cov, marker, observed, ids, tuple(cov_names))


def _num(text, name):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{name} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{name} is not finite: {text!r}")
    return v


def _binary(text, name):
    v = _num(text, name)
    if v not in (0.0, 1.0):
        raise ValueError(f"{name} must be 0 or 1, got {text!r}")
    return int(v)


def write_csv(dataset: Dataset, path, include_r: bool = True) -> None:
    """Write a dataset in the ingestion layout; floats round-trip exactly."""
    header = ["id", "time", "status", "marker", "treatment", *dataset.covariate_names]
    if include_r:
        header.append("r")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            m = dataset.marker[i]
            row = [str(dataset.ids[i]), repr(float(dataset.time[i])), int(dataset.status[i]),
                   "" if math.isnan(m) else repr(float(m)), int(dataset.treatment[i]),
                   *(repr(float(v)) for v in dataset.covariates[i])]
            if include_r:
                row.append(int(dataset.observed[i]))
            w.writerow(row)


# ---------------------------------------------------------------------------
# landmark view


@dataclass(frozen=True, eq=False)
class LandmarkView:
    """Per-subject functionals of the data at landmark time ``t`` and threshold ``y``.

    ``above_threshold`` is NaN wherever it is undefined (not alive and
    under observation at ``t``, or marker missing).
    """

    t: float
    y: float
    t_star_t: np.ndarray
    delta_t: np.ndarray
    alive_uncensored: np.ndarray
    above_threshold: np.ndarray
    marker_observed: np.ndarray

    def with_threshold(self, y: float, marker: np.ndarray) -> LandmarkView:
        return LandmarkView(self.t, y, self.t_star_t, self.delta_t, self.alive_uncensored,
                            _above(marker, self.alive_uncensored, self.marker_observed, y),
                            self.marker_observed)


def _above(marker, alive, observed, y):
    out = np.full(marker.shape[0], np.nan)
    idx = np.nonzero(alive & (observed == 1))[0]
    out[idx] = (marker[idx] > y).astype(float)
    return out


def landmark_view(dataset: Dataset, t: float, y: float = -np.inf,
                  missingness: str = "none") -> LandmarkView:
    """Landmark transformation at time ``t``.

    A subject is alive and under observation at ``t`` iff ``followup_time > t``
    (a follow-up time exactly equal to ``t`` does not count). Markers of
    subjects not under observation past ``t`` are never read.
    """
    if not t > 0:
        raise ValueError("landmark time must be positive")
    if missingness not in ("none", "mar"):
        raise ValueError("missingness must be 'none' or 'mar'")
    time = dataset.time
    alive = time > t
    delta_t = np.where(alive, 1, dataset.status).astype(np.int8)
    has_marker = ~np.isnan(dataset.marker)
    stale = np.nonzero(~alive & has_marker)[0]
    if stale.size:
        raise ValidationError(
            f"marker recorded for subjects not under observation past t={t}: ids {_ids(dataset, stale)}",
            dataset.ids[stale])
    missing = np.nonzero(alive & ~has_marker)[0]
    if missing.size and missingness == "none":
        raise ValidationError(
            f"marker missing for subjects alive at t={t} (use MAR mode): ids {_ids(dataset, missing)}",
            dataset.ids[missing])
    observed = np.where(alive, dataset.observed, 1).astype(np.int8)
    return LandmarkView(
        t=float(t), y=float(y),
        t_star_t=np.minimum(time, t),
        delta_t=delta_t,
        alive_uncensored=alive,
        above_threshold=_above(dataset.marker, alive, observed, y),
        marker_observed=observed,
    )


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AnalysisConfig:
    landmark_t: float
    threshold_y: float | tuple[float, ...] = 0.0
    folds: int = 1
    seed: int = 0
    positivity_floor: float = 0.01
    known_randomization_prob: float | None = None
    utility_weight: float = 0.5
    learner_library: Mapping[str, Sequence[str]] = field(default_factory=dict)
    missingness_mode: str = "none"
    level: float = 0.95
    survival_form: str = "product"
    stratify_folds: bool = True

    def __post_init__(self):
        if not self.landmark_t > 0:
            raise ValueError("landmark_t must be positive")
        if not 0 < self.positivity_floor < 0.5:
            raise ValueError("positivity_floor must lie in (0, 0.5)")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if self.known_randomization_prob is not None and not 0 < self.known_randomization_prob < 1:
            raise ValueError("known_randomization_prob must lie in (0, 1)")
        if not 0 < self.utility_weight < 1:
            raise ValueError("utility_weight must lie in (0, 1)")
        if self.missingness_mode not in ("none", "mar"):
            raise ValueError("missingness_mode must be 'none' or 'mar'")
        if self.survival_form not in ("product", "exponential"):
            raise ValueError("survival_form must be 'product' or 'exponential'")
        grid = self.y_grid
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("threshold grid must be strictly increasing")

    @property
    def y_grid(self) -> tuple[float, ...]:
        y = self.threshold_y
        return tuple(float(v) for v in y) if isinstance(y, Iterable) else (float(y),)
