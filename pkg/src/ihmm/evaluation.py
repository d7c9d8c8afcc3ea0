"""Accuracy metrics for fitted chains and a point estimate of the state partition.

Partitions are label arrays over time points.  A list of per-series arrays is
treated as one partition of the pooled time points, since states are shared
across series.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset, ObsStatus
from .exceptions import LengthMismatch, NoCells, NoDraws, NoLabels

MECHANISMS = {"mar": ObsStatus.MAR, "lod": ObsStatus.BELOW_LOD}


def _flat(z) -> np.ndarray:
    if isinstance(z, (list, tuple)):
        return np.concatenate([np.asarray(a).ravel() for a in z]) if len(z) else np.zeros(0, int)
    return np.asarray(z).ravel()


def _codes(z):
    labels, inv = np.unique(z, return_inverse=True)
    return labels, inv.reshape(-1)


def contingency(a, b):
    """Counts of (label of ``a``, label of ``b``); returns (table, labels_a, labels_b)."""
    a, b = _flat(a), _flat(b)
    if a.size != b.size:
        raise LengthMismatch(f"partitions have lengths {a.size} and {b.size}")
    la, ia = _codes(a)
    lb, ib = _codes(b)
    table = np.bincount(ia * lb.size + ib, minlength=la.size * lb.size).reshape(la.size, lb.size)
    return table, la, lb


def optimal_matching(z_est, z_true):
    """Overlap-maximising injective relabelling of estimated onto true states.

    Returns ``(pairs, table, labels_est, labels_true)`` where ``pairs`` holds
    (estimated label, true label, overlap) for every assigned pair.
    """
    table, le, lt = contingency(z_est, z_true)
    rows, cols = linear_sum_assignment(table, maximize=True)
    pairs = [(le[r], lt[c], int(table[r, c])) for r, c in zip(rows, cols)]
    return pairs, table, le, lt


def hamming_distance(z_est, z_true) -> float:
    """Fraction of time points misclassified after optimal relabelling."""
    pairs, table, _, _ = optimal_matching(z_est, z_true)
    n = table.sum()
    if n == 0:
        return 0.0
    return 1.0 - sum(p[2] for p in pairs) / n


def k_hat(draws) -> float:
    """Mean number of occupied states over the retained draws."""
    if len(draws.z) == 0:
        raise NoDraws("no retained draws")
    return float(np.mean([np.unique(_flat(z)).size for z in draws.z]))


def mean_hamming(draws, z_true) -> float:
    if len(draws.z) == 0:
        raise NoDraws("no retained draws")
    return float(np.mean([hamming_distance(z, z_true) for z in draws.z]))


def mu_mse(draws, z_true, mu_true) -> float:
    """Mean squared error of the state means after per-draw optimal relabelling.

    Each matched true state contributes the squared error averaged over
    dimensions.  A true state without an estimated counterpart (including a
    pairing with zero overlap) contributes ``mean(mu_true[k] ** 2)``, the
    error of estimating it by zero.
    """
    if len(draws.z) == 0:
        raise NoDraws("no retained draws")
    mu_true = np.asarray(mu_true, dtype=float)
    present = np.unique(_flat(z_true))
    out = []
    for z, mu in zip(draws.z, draws.mu):
        pairs, _, _, _ = optimal_matching(z, z_true)
        err = {int(k): float(np.mean(mu_true[k] ** 2)) for k in present}
        for e, k, overlap in pairs:
            if overlap > 0:
                err[int(k)] = float(np.mean((np.asarray(mu)[e] - mu_true[k]) ** 2))
        out.append(np.mean(list(err.values())))
    return float(np.mean(out))


def imputation_error(values, cells, removed, mechanisms=("mar", "lod")) -> dict:
    """``{mechanism: (mse, bias)}`` of imputed against true values.

    ``values`` is ``(n_draws, n_cells)`` (or a list of imputation records)
    aligned with ``cells`` rows (series, t, dim); ``removed`` carries the true
    values and the mechanism of every removed cell.
    """
    if isinstance(values, list) and values and hasattr(values[0], "value"):
        values = [r.value for r in values]
    V = np.atleast_2d(np.asarray(values, dtype=float))
    cells = np.asarray(cells, dtype=int).reshape(-1, 3)
    if len(removed) == 0:
        raise NoCells("no removed cells to evaluate")
    index = {(int(s), int(t), int(d)): i for i, (s, t, d) in enumerate(cells)}
    out = {}
    for name in mechanisms:
        sel = np.flatnonzero(removed.mechanism == MECHANISMS[name])
        if sel.size == 0:
            raise NoCells(f"no removed {name} cells")
        cols = np.array([index[(int(removed.series[i]), int(removed.t[i]), int(removed.dim[i]))] for i in sel])
        err = V[:, cols] - removed.true_value[sel]
        out[name] = (float(np.mean(err ** 2)), float(np.mean(err)))
    return out


def _entropy(counts) -> float:
    c = counts[counts > 0].astype(float)
    n = c.sum()
    return float(-np.sum(c / n * np.log(c / n)))


def variation_of_information(a, b) -> float:
    """``VI(a, b) = 2 H(a, b) - H(a) - H(b)`` in nats."""
    table, _, _ = contingency(a, b)
    vi = 2.0 * _entropy(table.ravel()) - _entropy(table.sum(axis=1)) - _entropy(table.sum(axis=0))
    return max(vi, 0.0)


@dataclass
class PointPartition:
    z: list               # per-series labels
    draw_index: int       # position among the retained draws
    mean_vi: float


def point_estimate_partition(draws, max_draws: int | None = 500) -> PointPartition:
    """Retained draw with the smallest average VI to the others.

    With more than ``max_draws`` draws, an evenly spaced subset is searched.
    """
    n = len(draws.z)
    if n == 0:
        raise NoDraws("no retained draws")
    idx = np.arange(n)
    if max_draws is not None and n > max_draws:
        idx = np.unique(np.round(np.linspace(0, n - 1, max_draws)).astype(int))
    parts = [_flat(draws.z[i]) for i in idx]
    m = len(parts)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = variation_of_information(parts[i], parts[j])
    avg = D.sum(axis=1) / max(m - 1, 1)
    best = int(np.argmin(avg))
    return PointPartition(z=[np.asarray(a).copy() for a in draws.z[idx[best]]], draw_index=int(idx[best]),
                          mean_vi=float(avg[best]))


@dataclass
class Crosstab:
    states: np.ndarray
    labels: list
    counts: np.ndarray        # (n_states, n_labels)

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    @property
    def col_totals(self):
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def microenv_crosstab(partition, ds: Dataset) -> Crosstab:
    if any(s.microenv is None for s in ds.series):
        raise NoLabels("dataset has no microenvironment labels")
    z = _flat(partition)
    env = np.concatenate([np.asarray(s.microenv).astype(str) for s in ds.series])
    if z.size != env.size:
        raise LengthMismatch(f"partition length {z.size} differs from dataset length {env.size}")
    states, si = _codes(z)
    labels, li = _codes(env)
    counts = np.bincount(si * labels.size + li, minlength=states.size * labels.size).reshape(states.size, -1)
    return Crosstab(states=states, labels=labels.tolist(), counts=counts)


@dataclass
class MetricReport:
    k_hat: float = np.nan
    hamming: float = np.nan
    mu_mse: float = np.nan
    mar_mse: float = np.nan
    lod_mse: float = np.nan
    mar_bias: float = np.nan
    lod_bias: float = np.nan
    per_replicate: list = field(default_factory=list)

    METRICS = ("k_hat", "hamming", "mu_mse", "mar_mse", "lod_mse", "mar_bias", "lod_bias")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.METRICS}


def _imputation_metrics(rep: MetricReport, values, cells, removed) -> None:
    for name in MECHANISMS:
        if len(removed) and np.any(removed.mechanism == MECHANISMS[name]):
            mse, bias = imputation_error(values, cells, removed, mechanisms=(name,))[name]
            setattr(rep, f"{name}_mse", mse)
            setattr(rep, f"{name}_bias", bias)


def evaluate(draws, truth) -> MetricReport:
    """All metrics of one joint fit against simulation truth."""
    rep = MetricReport(k_hat=k_hat(draws), hamming=mean_hamming(draws, truth.z_true),
                       mu_mse=mu_mse(draws, truth.z_true, truth.mu_true))
    if draws.imputations:
        _imputation_metrics(rep, draws.imputations, draws.cells, truth.removed)
    return rep


def evaluate_independent(fits, truth) -> MetricReport:
    """Metrics for separate per-series fits: ``fits[s]`` was fitted to series ``s`` alone.

    K-hat is summed over series, Hamming and mean MSE are averaged, and the
    imputation errors pool every series' cells.
    """
    if len(fits) != len(truth.z_true):
        raise LengthMismatch("need one fit per series")
    khat = sum(k_hat(d) for d in fits)
    ham = np.mean([mean_hamming(d, [truth.z_true[s]]) for s, d in enumerate(fits)])
    mse = np.mean([mu_mse(d, [truth.z_true[s]], truth.mu_true) for s, d in enumerate(fits)])
    rep = MetricReport(k_hat=float(khat), hamming=float(ham), mu_mse=float(mse))
    if all(d.imputations for d in fits):
        n = min(len(d.imputations) for d in fits)
        values = np.hstack([np.asarray(d.imputations[:n]) for d in fits])
        cells = np.vstack([np.column_stack([np.full(len(d.cells), s), np.asarray(d.cells).reshape(-1, 3)[:, 1:]])
                           for s, d in enumerate(fits)])
        _imputation_metrics(rep, values, cells, truth.removed)
    return rep


def aggregate(reports) -> tuple[MetricReport, MetricReport]:
    """Mean and standard error of each metric across replicate reports."""
    reports = list(reports)
    if not reports:
        raise NoDraws("no reports to aggregate")
    M = np.array([[getattr(r, k) for k in MetricReport.METRICS] for r in reports], dtype=float)
    n = np.sum(np.isfinite(M), axis=0)
    with warnings.catch_warnings():
        # metrics missing from every replicate (e.g. no LOD cells) stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(M, axis=0)
        se = np.where(n > 1, np.nanstd(M, axis=0, ddof=1) / np.sqrt(np.maximum(n, 1)), np.nan)
    mk = lambda v: MetricReport(**dict(zip(MetricReport.METRICS, map(float, v))), per_replicate=reports)
    return mk(mean), mk(se)


def write_metrics(path, reports, labels=None) -> None:
    """``metrics.csv``: one row per replicate, then ``mean`` and ``se`` rows."""
    reports = list(reports)
    labels = labels or [str(i + 1) for i in range(len(reports))]
    mean, se = aggregate(reports)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", *MetricReport.METRICS])
        for lab, r in [*zip(labels, reports), ("mean", mean), ("se", se)]:
            w.writerow([lab, *(repr(float(v)) for v in r.as_dict().values())])


def read_metrics(path) -> list[MetricReport]:
    """Per-replicate rows of a ``metrics.csv`` (summary rows skipped)."""
    with Path(path).open(encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r["replicate"] not in ("mean", "se")]
    names = {f.name for f in fields(MetricReport)}
    return [MetricReport(**{k: float(v) for k, v in r.items() if k in names}) for r in rows]
