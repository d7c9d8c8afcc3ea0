"""CSV draw logs: ``states.csv``, ``imputations.csv``, ``params.csv`` and ``scalars.csv``.

Series and time indices are 0-based, dimensions are 1-based.  Values are in
whatever units the caller hands in (the command line writes original data
units).  Floats are written with ``repr`` so a read-back is exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import AffineTransform
from .exceptions import NoDraws
from .sampler import PosteriorDraws

LOG_FILES = ("states.csv", "imputations.csv", "params.csv", "scalars.csv")


def to_original_units(draws: PosteriorDraws, transform: AffineTransform) -> PosteriorDraws:
    """Copy of ``draws`` with means, covariances and imputations mapped through ``transform.inverse``."""
    out = PosteriorDraws(iterations=list(draws.iterations), z=draws.z, k_occupied=list(draws.k_occupied),
                         loglik=list(draws.loglik), imputation_iterations=list(draws.imputation_iterations),
                         cells=draws.cells, cell_status=draws.cell_status, series_names=list(draws.series_names))
    sc, loc = transform.scale, transform.loc
    out.mu = [np.asarray(m) * sc + loc for m in draws.mu]
    out.sigma = [np.asarray(s) * np.outer(sc, sc) for s in draws.sigma]
    dims = draws.cells[:, 2] if len(draws.cells) else np.zeros(0, int)
    out.imputations = [np.asarray(v) * sc[dims] + loc[dims] for v in draws.imputations]
    return out


def _fmt(x) -> str:
    return repr(float(x))


def write_draw_logs(draws: PosteriorDraws, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in LOG_FILES]
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        fh.write("iteration,series,t,state\n")
        for it, zs in zip(draws.iterations, draws.z):
            for s, z in enumerate(zs):
                block = np.column_stack([np.full(z.size, it), np.full(z.size, s), np.arange(z.size), z])
                np.savetxt(fh, block, fmt="%d", delimiter=",")
    with paths[1].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "series", "t", "dim", "value"])
        for it, vals in zip(draws.imputation_iterations, draws.imputations):
            for (s, t, d), v in zip(draws.cells.tolist(), vals.tolist()):
                w.writerow([it, s, t, d + 1, _fmt(v)])
    with paths[2].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "state", "parameter", "value"])
        for it, mu, sigma in zip(draws.iterations, draws.mu, draws.sigma):
            p = mu.shape[1]
            for k in range(mu.shape[0]):
                for d in range(p):
                    w.writerow([it, k, f"mu_{d + 1}", _fmt(mu[k, d])])
                for i in range(p):
                    for j in range(i + 1):
                        w.writerow([it, k, f"sigma_{i + 1}_{j + 1}", _fmt(sigma[k, i, j])])
    with paths[3].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "K", "loglik"])
        for it, k, ll in zip(draws.iterations, draws.k_occupied, draws.loglik):
            w.writerow([it, k, _fmt(ll)])
    return paths


def _read_rows(path):
    with Path(path).open(encoding="utf-8") as fh:
        return list(csv.reader(fh))[1:]


def read_draw_logs(in_dir) -> PosteriorDraws:
    """Inverse of :func:`write_draw_logs` (cell statuses are not logged and come back empty)."""
    d = Path(in_dir)
    scal = _read_rows(d / "scalars.csv")
    if not scal:
        raise NoDraws(f"no draws logged in {d}")
    draws = PosteriorDraws(iterations=[int(r[0]) for r in scal], k_occupied=[int(r[1]) for r in scal],
                           loglik=[float(r[2]) for r in scal])
    st = np.loadtxt(d / "states.csv", delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    pos = {it: i for i, it in enumerate(draws.iterations)}
    n_series = int(st[:, 1].max()) + 1
    by_it = np.split(st, np.flatnonzero(np.diff(st[:, 0])) + 1)
    draws.z = [None] * len(pos)
    for block in by_it:
        zs = [block[block[:, 1] == s] for s in range(n_series)]
        draws.z[pos[int(block[0, 0])]] = [b[np.argsort(b[:, 2]), 3] for b in zs]
    params = _read_rows(d / "params.csv")
    mus = {it: {} for it in draws.iterations}
    sigs = {it: {} for it in draws.iterations}
    for it, k, name, val in params:
        it, k, val = int(it), int(k), float(val)
        parts = name.split("_")
        if parts[0] == "mu":
            mus[it][(k, int(parts[1]) - 1)] = val
        else:
            sigs[it][(k, int(parts[1]) - 1, int(parts[2]) - 1)] = val
    for it in draws.iterations:
        K = 1 + max(k for k, _ in mus[it])
        p = 1 + max(d for _, d in mus[it])
        mu = np.zeros((K, p))
        sig = np.zeros((K, p, p))
        for (k, dd), v in mus[it].items():
            mu[k, dd] = v
        for (k, i, j), v in sigs[it].items():
            sig[k, i, j] = sig[k, j, i] = v
        draws.mu.append(mu)
        draws.sigma.append(sig)
    imp = _read_rows(d / "imputations.csv")
    if imp:
        its = [int(r[0]) for r in imp]
        first = its[0]
        n_cells = its.count(first)
        draws.cells = np.array([[int(r[1]), int(r[2]), int(r[3]) - 1] for r in imp[:n_cells]], dtype=int)
        vals = np.array([float(r[4]) for r in imp])
        draws.imputation_iterations = its[::n_cells]
        draws.imputations = list(vals.reshape(-1, n_cells))
    return draws
