"""Datasets of asynchronous multivariate time series with per-cell missingness.

A :class:`Dataset` is a list of :class:`Series` (one per subject-day) sharing
the number of exposure dimensions ``p`` and covariate columns ``q``.  Every
cell of a series carries an :class:`ObsStatus`; cells that are not observed
hold ``NaN`` in ``Series.values`` -- the sampler keeps current imputations in
its own state so datasets stay immutable.

The on-disk format is a long CSV, one row per time point::

    subject_id,day_id,time_index,clock_time,value_1,...,value_p,status_1,...,status_p[,microenv]

with status codes ``obs``, ``mar`` and ``lod``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import (
    DegenerateDimension,
    DimensionMismatch,
    EmptyDataset,
    MissingColumn,
    NonmonotoneTime,
    StatusValueConflict,
    UnknownCategory,
)


class ObsStatus(enum.IntEnum):
    OBSERVED = 0
    MAR = 1
    BELOW_LOD = 2


STATUS_CODES = {"obs": ObsStatus.OBSERVED, "mar": ObsStatus.MAR, "lod": ObsStatus.BELOW_LOD}
STATUS_NAMES = {v: k for k, v in STATUS_CODES.items()}

COVARIATE_KINDS = ("none", "cyclical", "subject-cyclical", "categorical", "subject-categorical")


@dataclass(frozen=True)
class CovariateSpec:
    """Which covariates drive the transition probabilities.

    ``subject-*`` kinds additionally switch on subject-specific effects.
    """

    kind: str = "none"
    harmonics: int = 2
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise ValueError(f"unknown covariate kind {self.kind!r}; expected one of {COVARIATE_KINDS}")
        if self.harmonics < 1:
            raise ValueError("harmonics must be positive")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))

    @property
    def subject_specific(self) -> bool:
        return self.kind.startswith("subject-")

    @property
    def base_kind(self) -> str:
        return self.kind.removeprefix("subject-")

    def n_columns(self) -> int:
        if self.base_kind == "cyclical":
            return 2 * self.harmonics
        if self.base_kind == "categorical":
            if self.categories is None:
                raise ValueError("categorical covariates need a category list")
            return len(self.categories) - 1
        return 0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "harmonics": self.harmonics}
        if self.categories is not None:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_dict(cls, d: dict | None) -> "CovariateSpec":
        d = d or {}
        cats = d.get("categories")
        return cls(kind=d.get("kind", "none"), harmonics=int(d.get("harmonics", 2)),
                   categories=tuple(cats) if cats is not None else None)


@dataclass
class Series:
    subject_id: str
    day_id: str
    values: np.ndarray           # (T, p), NaN where status != OBSERVED
    status: np.ndarray           # (T, p) int8 codes of ObsStatus
    clock_time: np.ndarray       # (T,) fraction of the day in [0, 1)
    covariates: np.ndarray       # (T, q)
    time_index: np.ndarray | None = None
    microenv: np.ndarray | None = None   # (T,) labels
    subject: int = 0             # contiguous subject index

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def missing_mask(self) -> np.ndarray:
        return self.status != ObsStatus.OBSERVED


@dataclass
class Dataset:
    series: list[Series]
    lod: np.ndarray
    subjects: dict[str, int] = field(default_factory=dict)
    covariate_spec: CovariateSpec = field(default_factory=CovariateSpec)

    def __post_init__(self):
        if not self.series:
            raise EmptyDataset("dataset has no series")
        self.lod = np.asarray(self.lod, dtype=float)
        p, q = self.series[0].p, self.series[0].covariates.shape[1]
        for s in self.series:
            if s.p != p or s.covariates.shape[1] != q:
                raise DimensionMismatch("all series must share p and q")
            if s.T < 2:
                raise DimensionMismatch(f"series {s.subject_id}/{s.day_id} has fewer than 2 time points")
        if self.lod.shape != (p,):
            raise DimensionMismatch(f"lod has shape {self.lod.shape}, expected ({p},)")
        if not self.subjects:
            for s in self.series:
                self.subjects.setdefault(s.subject_id, len(self.subjects))
        for s in self.series:
            s.subject = self.subjects[s.subject_id]

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.series[0].p

    @property
    def q(self) -> int:
        return self.series[0].covariates.shape[1]

    @property
    def n_timepoints(self) -> int:
        return sum(s.T for s in self.series)

    def with_series(self, series: Sequence[Series]) -> "Dataset":
        """Sub-dataset on the given series, subject indices recomputed."""
        return Dataset(series=[replace(s) for s in series], lod=self.lod.copy(),
                       covariate_spec=self.covariate_spec)


@dataclass(frozen=True)
class AffineTransform:
    """Per-dimension map ``x -> (x - loc) / scale``."""

    loc: np.ndarray
    scale: np.ndarray

    def forward(self, x):
        return (np.asarray(x) - self.loc) / self.scale

    def inverse(self, x):
        return np.asarray(x) * self.scale + self.loc

    @classmethod
    def identity(cls, p: int) -> "AffineTransform":
        return cls(np.zeros(p), np.ones(p))

    def to_dict(self) -> dict:
        return {"loc": [float(v) for v in self.loc], "scale": [float(v) for v in self.scale]}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        return cls(np.asarray(d["loc"], dtype=float), np.asarray(d["scale"], dtype=float))


def build_covariates(clock_time, spec: CovariateSpec, microenv=None) -> np.ndarray:
    """Transition covariates for one series.

    Cyclical designs use ``h = 2*pi*clock_time`` and columns
    ``[sin(h), cos(h), sin(2h), cos(2h), ...]``.  Categorical designs are
    reference coded with the first category as reference.
    """
    t = np.mod(np.asarray(clock_time, dtype=float), 1.0)
    kind = spec.base_kind
    if kind == "none":
        return np.zeros((t.size, 0))
    if kind == "cyclical":
        h = 2.0 * np.pi * t
        cols = []
        for m in range(1, spec.harmonics + 1):
            cols += [np.sin(m * h), np.cos(m * h)]
        return np.column_stack(cols)
    # categorical
    if microenv is None:
        raise UnknownCategory("categorical covariates requested but no labels supplied")
    cats = spec.categories
    if cats is None:
        raise ValueError("categorical covariates need a category list")
    lookup = {c: i for i, c in enumerate(cats)}
    X = np.zeros((t.size, len(cats) - 1))
    for row, lab in enumerate(microenv):
        try:
            idx = lookup[str(lab)]
        except KeyError:
            raise UnknownCategory(f"label {lab!r} not in {cats}") from None
        if idx > 0:
            X[row, idx - 1] = 1.0
    return X


def standardize(ds: Dataset) -> tuple[Dataset, AffineTransform]:
    """Scale each dimension so its observed cells, pooled over series, have mean 0 and variance 1."""
    p = ds.p
    loc = np.empty(p)
    scale = np.empty(p)
    for d in range(p):
        vals = np.concatenate([s.values[s.status[:, d] == ObsStatus.OBSERVED, d] for s in ds.series])
        if vals.size < 2:
            raise DegenerateDimension(f"dimension {d} has fewer than 2 observed values")
        loc[d] = vals.mean()
        scale[d] = vals.std()
        if not scale[d] > 0:
            raise DegenerateDimension(f"dimension {d} has zero variance")
    tf = AffineTransform(loc, scale)
    series = [replace(s, values=tf.forward(s.values)) for s in ds.series]
    out = Dataset(series=series, lod=tf.forward(ds.lod), subjects=dict(ds.subjects),
                  covariate_spec=ds.covariate_spec)
    return out, tf


def _required_columns(p: int) -> list[str]:
    return (["subject_id", "day_id", "time_index", "clock_time"]
            + [f"value_{d + 1}" for d in range(p)] + [f"status_{d + 1}" for d in range(p)])


def ingest_csv(path, spec: CovariateSpec | None = None, lod=None) -> Dataset:
    """Read a long-format CSV into a :class:`Dataset`.

    Rows are grouped by ``(subject_id, day_id)`` in order of first appearance
    and sorted by ``time_index``.  ``lod`` values are in the same units as the
    file.  Values stored in non-observed cells are discarded.
    """
    spec = spec or CovariateSpec()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        p = sum(1 for c in header if c.startswith("value_"))
        if p == 0:
            raise MissingColumn("no value_* columns")
        missing = [c for c in _required_columns(p) if c not in header]
        if missing:
            raise MissingColumn(f"missing columns: {missing}")
        has_env = "microenv" in header
        groups: dict[tuple[str, str], list[dict]] = {}
        for row in reader:
            groups.setdefault((row["subject_id"], row["day_id"]), []).append(row)
    if not groups:
        raise MissingColumn("file has no data rows")
    if lod is None:
        raise ValueError("lod vector is required")
    lod = np.asarray(lod, dtype=float)
    if lod.shape != (p,):
        raise DimensionMismatch(f"lod has {lod.size} entries, data has p={p}")
    if not np.all(np.isfinite(lod)):
        raise ValueError("lod must be finite")

    if spec.base_kind == "categorical" and spec.categories is None:
        if not has_env:
            raise MissingColumn("categorical covariates need a microenv column")
        labels = sorted({r["microenv"] for rows in groups.values() for r in rows})
        spec = replace(spec, categories=tuple(labels))

    series = []
    for (sid, did), rows in groups.items():
        rows.sort(key=lambda r: int(r["time_index"]))
        tidx = np.array([int(r["time_index"]) for r in rows])
        clock = np.array([float(r["clock_time"]) for r in rows])
        if np.any(np.diff(tidx) <= 0) or np.any(np.diff(clock) <= 0):
            raise NonmonotoneTime(f"series {sid}/{did}: time must be strictly increasing")
        T = len(rows)
        values = np.full((T, p), np.nan)
        status = np.zeros((T, p), dtype=np.int8)
        for t, r in enumerate(rows):
            for d in range(p):
                code = r[f"status_{d + 1}"].strip()
                if code not in STATUS_CODES:
                    raise StatusValueConflict(f"unknown status {code!r}")
                st = STATUS_CODES[code]
                status[t, d] = st
                raw = r[f"value_{d + 1}"].strip()
                if st == ObsStatus.OBSERVED:
                    if raw == "":
                        raise StatusValueConflict(f"series {sid}/{did} t={tidx[t]} dim {d + 1}: observed cell is empty")
                    v = float(raw)
                    if not v > lod[d]:
                        raise StatusValueConflict(
                            f"series {sid}/{did} t={tidx[t]} dim {d + 1}: observed value {v} not above lod {lod[d]}")
                    values[t, d] = v
        env = np.array([r["microenv"] for r in rows], dtype=object) if has_env else None
        X = build_covariates(clock, spec, env)
        series.append(Series(subject_id=sid, day_id=did, values=values, status=status, clock_time=clock,
                             covariates=X, time_index=tidx, microenv=env))
    return Dataset(series=series, lod=lod, covariate_spec=spec)


def write_csv(ds: Dataset, path) -> None:
    """Emit ``ds`` in the long CSV format read by :func:`ingest_csv`.

    Floats are written with ``repr`` so that a read-back is bit exact.
    """
    p = ds.p
    has_env = all(s.microenv is not None for s in ds.series)
    header = _required_columns(p) + (["microenv"] if has_env else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in ds.series:
            tidx = s.time_index if s.time_index is not None else np.arange(s.T)
            for t in range(s.T):
                vals = ["" if s.status[t, d] != ObsStatus.OBSERVED else repr(float(s.values[t, d]))
                        for d in range(p)]
                codes = [STATUS_NAMES[ObsStatus(int(c))] for c in s.status[t]]
                row = [s.subject_id, s.day_id, int(tidx[t]), repr(float(s.clock_time[t]))] + vals + codes
                if has_env:
                    row.append(s.microenv[t])
                w.writerow(row)


def with_covariates(ds: Dataset, spec: CovariateSpec) -> Dataset:
    """Rebuild every series' design matrix under a different covariate spec."""
    if spec.base_kind == "categorical" and spec.categories is None:
        labels = sorted({str(v) for s in ds.series for v in (s.microenv if s.microenv is not None else [])})
        spec = replace(spec, categories=tuple(labels))
    series = [replace(s, covariates=build_covariates(s.clock_time, spec, s.microenv)) for s in ds.series]
    return Dataset(series=series, lod=ds.lod.copy(), subjects=dict(ds.subjects), covariate_spec=spec)
