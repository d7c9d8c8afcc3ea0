"""Synthetic multi-series datasets with known hidden states and injected missingness.

Each series draws state proportions from a Dirichlet with declining weights,
draws ``T`` labels, and then lays the labels out as contiguous blocks:
ascending state order for the *shared* scenario, a per-series random order
for the *distinct* scenario.  The sequence is rotated so it starts halfway
through its first block, hence starts and ends in the same state.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import AffineTransform, CovariateSpec, Dataset, ObsStatus, Series, write_csv
from .exceptions import LevelUnreachable

MAR_CHUNK_MAX = 10


@dataclass
class SimConfig:
    n_series: int = 20
    T: int = 288
    p: int = 3
    K_true: int = 20
    scenario: str = "shared"          # or "distinct"
    missing_level: float = 0.0
    seed: int = 0
    mu_cov_diag: tuple | None = None  # defaults to (0.7, 0.4, 0.2) for p = 3
    cov_scale: float = 0.01
    offdiag_var: float = 0.5

    def __post_init__(self):
        if self.scenario not in ("shared", "distinct"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not 0.0 <= self.missing_level < 0.5:
            raise ValueError("missing_level must lie in [0, 0.5)")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if known.get("mu_cov_diag") is not None:
            known["mu_cov_diag"] = tuple(known["mu_cov_diag"])
        return cls(**known)


@dataclass
class RemovedCells:
    series: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    dim: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    true_value: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mechanism: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))  # ObsStatus codes

    def __len__(self):
        return self.series.size


@dataclass
class SimTruth:
    z_true: list                 # per-series state vectors
    mu_true: np.ndarray          # (K, p), standardised units
    sigma_true: np.ndarray       # (K, p, p), standardised units
    complete: list               # per-series complete (T, p) data, standardised units
    removed: RemovedCells = field(default_factory=RemovedCells)
    transform: AffineTransform | None = None   # raw -> standardised


def _mu_cov_diag(cfg: SimConfig) -> np.ndarray:
    if cfg.mu_cov_diag is not None:
        diag = np.asarray(cfg.mu_cov_diag, dtype=float)
        if diag.size != cfg.p:
            raise ValueError("mu_cov_diag must have p entries")
        return diag
    return np.resize([0.7, 0.4, 0.2], cfg.p).astype(float)


def block_sequence(labels: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Group ``labels`` into blocks following ``order`` and start halfway through the first block."""
    counts = np.bincount(labels, minlength=order.size)
    seq = np.concatenate([np.full(counts[k], k) for k in order])
    first = seq[0]
    return np.roll(seq, -(counts[first] // 2))


def generate(cfg: SimConfig) -> tuple[Dataset, SimTruth]:
    rng = np.random.default_rng(cfg.seed)
    K, p = cfg.K_true, cfg.p
    mu = rng.normal(size=(K, p)) * np.sqrt(_mu_cov_diag(cfg))
    sigma = np.empty((K, p, p))
    for k in range(K):
        L = np.eye(p)
        L[np.tril_indices(p, -1)] = rng.normal(0.0, np.sqrt(cfg.offdiag_var), size=p * (p - 1) // 2)
        Linv = np.linalg.inv(L)
        sigma[k] = cfg.cov_scale * Linv @ Linv.T
    weights = np.arange(K, 0, -1, dtype=float)
    z_true, raw = [], []
    for _ in range(cfg.n_series):
        rho = rng.dirichlet(weights)
        labels = rng.choice(K, size=cfg.T, p=rho)
        order = np.arange(K) if cfg.scenario == "shared" else rng.permutation(K)
        z = block_sequence(labels, order)
        chol = np.linalg.cholesky(sigma[z])
        y = mu[z] + np.einsum("tij,tj->ti", chol, rng.standard_normal((cfg.T, p)))
        z_true.append(z)
        raw.append(y)
    allv = np.vstack(raw)
    tf = AffineTransform(allv.mean(axis=0), allv.std(axis=0))
    complete = [tf.forward(y) for y in raw]
    mu_std = tf.forward(mu)
    sigma_std = sigma / np.outer(tf.scale, tf.scale)
    clock = np.arange(cfg.T) / cfg.T
    series = [Series(subject_id=f"s{i + 1}", day_id="d1", values=y.copy(), status=np.zeros((cfg.T, p), np.int8),
                     clock_time=clock.copy(), covariates=np.zeros((cfg.T, 0)), time_index=np.arange(cfg.T))
              for i, y in enumerate(complete)]
    # no cell is censored yet: any bound below every value will do
    lod = np.vstack(complete).min(axis=0) - 1.0
    ds = Dataset(series=series, lod=lod, covariate_spec=CovariateSpec())
    truth = SimTruth(z_true=z_true, mu_true=mu_std, sigma_true=sigma_std, complete=complete, transform=tf)
    if cfg.missing_level > 0:
        ds, truth = inject_missing(ds, truth, cfg.missing_level, rng)
    return ds, truth


def inject_missing(ds: Dataset, truth: SimTruth, level: float, rng: np.random.Generator):
    """Censor the lowest ``level / 2`` of each dimension and remove MAR chunks of 1-10 points
    until ``level / 2`` of all cells are MAR."""
    if not 0.0 <= level < 0.5:
        raise ValueError("level must lie in [0, 0.5)")
    if level == 0:
        return ds, truth
    p = ds.p
    full = truth.complete
    allv = np.vstack(full)
    lod = np.quantile(allv, level / 2.0, axis=0)
    # observed values must lie strictly above the bound
    lod = np.where((allv == lod).any(axis=0), np.nextafter(lod, -np.inf), lod)
    status = [np.where(y < lod, ObsStatus.BELOW_LOD, ObsStatus.OBSERVED).astype(np.int8) for y in full]
    total = allv.size
    target = int(round(level / 2.0 * total))
    n_mar = 0
    attempts, max_attempts = 0, 100 * total
    while n_mar < target:
        attempts += 1
        if attempts > max_attempts:
            raise LevelUnreachable(f"could not remove {target} MAR cells")
        s = int(rng.integers(len(full)))
        d = int(rng.integers(p))
        length = int(rng.integers(1, MAR_CHUNK_MAX + 1))
        start = int(rng.integers(full[s].shape[0]))
        seg = status[s][start:start + length, d]
        fresh = seg == ObsStatus.OBSERVED
        seg[fresh] = ObsStatus.MAR
        n_mar += int(fresh.sum())
    rem = []
    series = []
    for s, (ser, st, y) in enumerate(zip(ds.series, status, full)):
        vals = y.copy()
        vals[st != ObsStatus.OBSERVED] = np.nan
        series.append(replace(ser, values=vals, status=st))
        t, d = np.nonzero(st != ObsStatus.OBSERVED)
        rem.append((np.full(t.size, s), t, d, y[t, d], st[t, d]))
    removed = RemovedCells(*(np.concatenate([r[i] for r in rem]) for i in range(5)))
    out = Dataset(series=series, lod=lod, subjects=dict(ds.subjects), covariate_spec=ds.covariate_spec)
    return out, replace(truth, removed=removed)


def write_simulation(ds: Dataset, truth: SimTruth, out_dir) -> list[Path]:
    """Write ``data.csv``, ``lod.json``, ``truth.csv``, ``removed.csv`` and ``mu_true.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "data.csv", out / "lod.json", out / "truth.csv", out / "removed.csv", out / "mu_true.csv"]
    write_csv(ds, paths[0])
    paths[1].write_text(json.dumps([float(v) for v in ds.lod]) + "\n", encoding="utf-8")
    with paths[2].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "t", "true_state"])
        for s, z in enumerate(truth.z_true):
            for t, k in enumerate(z):
                w.writerow([s, t, int(k)])
    with paths[3].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "t", "dim", "true_value", "mechanism"])
        r = truth.removed
        names = {ObsStatus.MAR: "mar", ObsStatus.BELOW_LOD: "lod"}
        for i in range(len(r)):
            w.writerow([int(r.series[i]), int(r.t[i]), int(r.dim[i]) + 1, repr(float(r.true_value[i])),
                        names[ObsStatus(int(r.mechanism[i]))]])
    with paths[4].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "dim", "value"])
        for k, row in enumerate(truth.mu_true):
            for d, v in enumerate(row):
                w.writerow([k, d + 1, repr(float(v))])
    return paths


def read_truth(truth_dir):
    """Read back ``truth.csv``, ``removed.csv`` and ``mu_true.csv`` written by :func:`write_simulation`."""
    d = Path(truth_dir)
    rows = np.loadtxt(d / "truth.csv", delimiter=",", skiprows=1, dtype=int, ndmin=2)
    n = rows[:, 0].max() + 1
    z_true = [rows[rows[:, 0] == s][np.argsort(rows[rows[:, 0] == s][:, 1]), 2] for s in range(n)]
    mu_rows = np.loadtxt(d / "mu_true.csv", delimiter=",", skiprows=1, ndmin=2)
    K, p = int(mu_rows[:, 0].max()) + 1, int(mu_rows[:, 1].max())
    mu = np.zeros((K, p))
    mu[mu_rows[:, 0].astype(int), mu_rows[:, 1].astype(int) - 1] = mu_rows[:, 2]
    removed = RemovedCells()
    path = d / "removed.csv"
    with path.open(encoding="utf-8") as fh:
        rdr = list(csv.DictReader(fh))
    if rdr:
        codes = {"mar": ObsStatus.MAR, "lod": ObsStatus.BELOW_LOD}
        removed = RemovedCells(series=np.array([int(r["series"]) for r in rdr]),
                               t=np.array([int(r["t"]) for r in rdr]),
                               dim=np.array([int(r["dim"]) - 1 for r in rdr]),
                               true_value=np.array([float(r["true_value"]) for r in rdr]),
                               mechanism=np.array([codes[r["mechanism"]] for r in rdr], dtype=np.int8))
    return SimTruth(z_true=z_true, mu_true=mu, sigma_true=np.zeros((K, p, p)), complete=[], removed=removed)
