"""Multiple imputation of missing-at-random and below-detection-limit cells.

Given a time point's hidden state ``k``, the unobserved coordinates are drawn
from the state's Gaussian conditioned on the observed ones; coordinates below
the limit of detection are additionally truncated to ``(-inf, lod]``.  MAR
and LOD coordinates at one time point are drawn jointly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import STATUS_NAMES, AffineTransform, ObsStatus
from .emissions import EmissionParams, sample_truncated_mvn
from .exceptions import NoPostBurninDraws


def _conditional_batch(params: EmissionParams, obs_idx, mis_idx, Y):
    """Conditional law of ``Y[:, mis_idx]`` given ``Y[:, obs_idx]`` for a batch of rows.

    The conditional covariance does not depend on the observed values, so
    one Schur complement serves the whole batch.
    """
    if obs_idx.size == 0:
        mean = np.broadcast_to(params.mu, (Y.shape[0], params.mu.size)).copy()
        return mean, params.sigma
    S = params.sigma
    S_om = S[np.ix_(obs_idx, mis_idx)]
    gain = np.linalg.solve(S[np.ix_(obs_idx, obs_idx)], S_om)       # S_oo^-1 S_om
    mean = params.mu[mis_idx] + (Y[:, obs_idx] - params.mu[obs_idx]) @ gain
    cov = S[np.ix_(mis_idx, mis_idx)] - S_om.T @ gain
    return mean, 0.5 * (cov + cov.T)


def impute_block(Y, status_row, params: EmissionParams, lod, rng: np.random.Generator,
                 sweeps: int = 10, warm_start: bool = True) -> np.ndarray:
    """Impute every row of ``Y`` sharing one missingness pattern and one state.

    ``Y`` is ``(m, p)`` holding observed values (and current imputations when
    ``warm_start`` is set, used as the start of the truncated Gibbs chain).
    Returns a new array; observed cells are untouched.
    """
    Y = np.array(Y, dtype=float, copy=True)
    status_row = np.asarray(status_row)
    mis = status_row != ObsStatus.OBSERVED
    if not mis.any():
        return Y
    obs_idx = np.flatnonzero(~mis)
    mis_idx = np.flatnonzero(mis)
    mean, cov = _conditional_batch(params, obs_idx, mis_idx, Y)
    upper = np.where(status_row[mis_idx] == ObsStatus.BELOW_LOD, np.asarray(lod)[mis_idx], np.inf)
    if not np.isfinite(upper).any():
        chol = np.linalg.cholesky(cov)
        Y[:, mis_idx] = mean + rng.standard_normal(mean.shape) @ chol.T
        return Y
    x0 = None
    if warm_start:
        cur = Y[:, mis_idx]
        if np.all(np.isfinite(cur)) and np.all(cur <= upper):
            x0 = cur
    Y[:, mis_idx] = sample_truncated_mvn(mean, cov, upper, rng, sweeps=sweeps, x0=x0)
    return Y


def impute_time_point(y, status, state: int, params: EmissionParams, lod, rng: np.random.Generator,
                      sweeps: int = 10) -> np.ndarray:
    """Draw the non-observed cells of one time vector given its hidden state.

    ``state`` only identifies which emission parameters were passed in.
    """
    y = np.asarray(y, dtype=float)
    return impute_block(y[None, :], status, params, lod, rng, sweeps=sweeps)[0]


@dataclass
class ImputationRecord:
    draw_index: int
    series: np.ndarray
    t: np.ndarray
    dim: np.ndarray
    value: np.ndarray
    status: np.ndarray

    @property
    def cells(self):
        return list(zip(self.series.tolist(), self.t.tolist(), self.dim.tolist(),
                        self.value.tolist(), self.status.tolist()))


@dataclass
class ImputationSummary:
    series: np.ndarray
    t: np.ndarray
    dim: np.ndarray
    status: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def collect_imputations(draws, level: float = 0.95):
    """Retained imputation draws as records (indexed from 1) plus per-cell summaries.

    Intervals are equal-tailed.
    """
    if not draws.imputations:
        raise NoPostBurninDraws("no retained imputation draws")
    cells = draws.cells
    status = draws.cell_status
    records = [ImputationRecord(draw_index=i + 1, series=cells[:, 0], t=cells[:, 1], dim=cells[:, 2],
                                value=np.asarray(v, dtype=float), status=status)
               for i, v in enumerate(draws.imputations)]
    V = np.vstack([r.value for r in records]) if cells.shape[0] else np.zeros((len(records), 0))
    tail = (1.0 - level) / 2.0
    summary = ImputationSummary(series=cells[:, 0], t=cells[:, 1], dim=cells[:, 2], status=status,
                                mean=V.mean(axis=0), lower=np.quantile(V, tail, axis=0),
                                upper=np.quantile(V, 1.0 - tail, axis=0))
    return records, summary


def back_transform(records, transform: AffineTransform, lod=None):
    """Map imputed values back to the original data units.

    When the standardised ``lod`` is given, LOD cells are re-checked against
    the back-transformed bound.
    """
    out = []
    for r in records:
        vals = r.value * transform.scale[r.dim] + transform.loc[r.dim]
        if lod is not None:
            bound = transform.inverse(np.asarray(lod))[r.dim]
            bad = (r.status == ObsStatus.BELOW_LOD) & (vals > bound + 1e-9 * np.abs(bound))
            if bad.any():
                raise AssertionError("LOD imputation above its bound after back-transformation")
        out.append(replace(r, value=vals))
    return out


def write_summary(summary: ImputationSummary, path, series_names=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "t", "dim", "status", "posterior_mean", "q2.5", "q97.5"])
        for i in range(summary.series.size):
            s = int(summary.series[i])
            w.writerow([series_names[s] if series_names else s, int(summary.t[i]), int(summary.dim[i]) + 1,
                        STATUS_NAMES[ObsStatus(int(summary.status[i]))], repr(float(summary.mean[i])),
                        repr(float(summary.lower[i])), repr(float(summary.upper[i]))])
