"""Comparison models: pooled and label-stratified Gaussians, a temporal-free
Dirichlet-process-style mixture, and separate per-series fits."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data import CovariateSpec, Dataset, ObsStatus, with_covariates
from .emissions import EmissionParams, posterior_update
from .exceptions import NoLabels
from .sampler import (
    ChainState,
    McmcConfig,
    PosteriorDraws,
    Priors,
    _impute_all,
    _Layout,
    _record,
    missing_cells,
    run,
)

BASELINE_KINDS = ("pooled", "stratified", "dpmm")


def _fixed_assignment_fit(ds: Dataset, labels: list, priors: Priors, cfg: McmcConfig) -> PosteriorDraws:
    """Gibbs sampler for Gaussians with known group labels: alternate NIW draws
    per group and imputation of every missing cell from its group's law."""
    n_groups = int(max(z.max() for z in labels)) + 1
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed).spawn(1)[0]))
    values = []
    for ser in ds.series:
        v = np.where(ser.status == ObsStatus.OBSERVED, ser.values, 0.0)
        lod_cells = ser.status == ObsStatus.BELOW_LOD
        v[lod_cells] = np.broadcast_to(ds.lod - 0.5, v.shape)[lod_cells]
        values.append(v)
    chain = ChainState(z=[np.asarray(z, dtype=np.int64) for z in labels], u=[], psbp=None,
                       emissions=[EmissionParams(priors.niw.mu0.copy(), priors.niw.scale.copy())] * n_groups,
                       values=values, rng=rng, series_rngs=[], seed=cfg.seed)
    cells, status = missing_cells(ds)
    draws = PosteriorDraws(cells=cells, cell_status=status,
                           series_names=[f"{s.subject_id}/{s.day_id}" for s in ds.series])
    layout = _Layout(ds)
    Z = np.concatenate(chain.z)
    recorded = set(cfg.recorded_iterations().tolist())
    imputed = set(cfg.imputation_iterations().tolist())
    for _ in range(cfg.n_iter):
        V = np.vstack(chain.values)
        chain.emissions = [posterior_update(priors.niw, V[Z == g], rng) for g in range(n_groups)]
        _impute_all(chain, ds, layout, cfg)
        chain.iteration += 1
        if chain.iteration in recorded:
            _record(chain, draws, chain.iteration in imputed)
    return draws


def fit_pooled(ds: Dataset, priors: Priors | None = None, cfg: McmcConfig | None = None) -> PosteriorDraws:
    """One Gaussian for every time point of every series."""
    priors = priors or Priors.default(ds.p)
    cfg = cfg or McmcConfig()
    return _fixed_assignment_fit(ds, [np.zeros(s.T, dtype=np.int64) for s in ds.series], priors, cfg)


def fit_stratified(ds: Dataset, priors: Priors | None = None, cfg: McmcConfig | None = None) -> PosteriorDraws:
    """One Gaussian per microenvironment label (labels sorted, coded from 0)."""
    if any(s.microenv is None for s in ds.series):
        raise NoLabels("stratified fit needs microenvironment labels")
    priors = priors or Priors.default(ds.p)
    cfg = cfg or McmcConfig()
    names = sorted({str(v) for s in ds.series for v in s.microenv})
    code = {n: i for i, n in enumerate(names)}
    labels = [np.array([code[str(v)] for v in s.microenv], dtype=np.int64) for s in ds.series]
    return _fixed_assignment_fit(ds, labels, priors, cfg)


def fit_dpmm(ds: Dataset, priors: Priors | None = None, cfg: McmcConfig | None = None) -> PosteriorDraws:
    """Shared states with no temporal dependence: one stick row for every
    previous state and no covariates."""
    priors = priors or Priors.default(ds.p)
    cfg = replace(cfg or McmcConfig(), shared=True)
    return run(with_covariates(ds, CovariateSpec("none")), cfg, priors)


def series_seed(seed: int, s: int) -> int:
    """Seed of the ``s``-th per-series fit, derived from the run seed."""
    return int(np.random.SeedSequence([seed, s]).generate_state(1, np.uint32)[0])


def fit_independent(ds: Dataset, cfg: McmcConfig | None = None, priors: Priors | None = None,
                    callback=None) -> list[PosteriorDraws]:
    """Fit the model to every series on its own; returns one draw set per series."""
    priors = priors or Priors.default(ds.p)
    cfg = cfg or McmcConfig()
    fits = []
    for s, ser in enumerate(ds.series):
        sub = Dataset(series=[replace(ser)], lod=ds.lod.copy(), covariate_spec=ds.covariate_spec)
        fits.append(run(sub, replace(cfg, seed=series_seed(cfg.seed, s), checkpoint_path=None), priors))
        if callback is not None:
            callback(s, fits[-1])
    return fits
