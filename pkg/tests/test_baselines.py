import numpy as np
import pytest

from ihmm.baselines import fit_dpmm, fit_independent, fit_pooled, fit_stratified, series_seed
from ihmm.data import Dataset, ObsStatus
from ihmm.emissions import NiwHyper, niw_posterior
from ihmm.evaluation import hamming_distance, k_hat
from ihmm.exceptions import NoLabels
from ihmm.sampler import McmcConfig

from conftest import make_series


def gaussian_dataset(rng, n=3, T=40, p=2, env=None):
    series = []
    for i in range(n):
        y = rng.normal(0.5, 1.0, size=(T, p))
        series.append(make_series(y, subject_id=f"s{i}", microenv=None if env is None else env[i]))
    return Dataset(series=series, lod=np.full(p, -10.0))


def test_pooled_matches_conjugate_posterior(rng):
    ds = gaussian_dataset(rng)
    draws = fit_pooled(ds, cfg=McmcConfig(n_iter=3000, burn_in=100, seed=1))
    post = niw_posterior(NiwHyper.default(2), np.vstack([s.values for s in ds.series]))
    mu = np.array([m[0] for m in draws.mu])
    sig = np.array([s[0] for s in draws.sigma])
    np.testing.assert_allclose(mu.mean(axis=0), post.mu0, atol=0.01)
    np.testing.assert_allclose(sig.mean(axis=0), post.scale / (post.nu - 3), atol=0.02)
    assert all(np.all(z == 0) for zs in draws.z for z in zs)


def test_stratified_with_one_label_equals_pooled(rng):
    env = [np.array(["home"] * 40, dtype=object)] * 3
    ds = gaussian_dataset(rng, env=env)
    cfg = McmcConfig(n_iter=20, burn_in=5, seed=3)
    a, b = fit_pooled(ds, cfg=cfg), fit_stratified(ds, cfg=cfg)
    for x, y in zip(a.mu, b.mu):
        np.testing.assert_array_equal(x, y)


def test_stratified_separates_labels(rng):
    T = 60
    env = np.array(["work", "home"] * (T // 2), dtype=object)
    y = np.where((env == "home")[:, None], -2.0, 2.0) + 0.3 * rng.standard_normal((T, 1))
    ds = Dataset(series=[make_series(y, microenv=env)], lod=np.array([-10.0]))
    draws = fit_stratified(ds, cfg=McmcConfig(n_iter=400, burn_in=100, seed=2))
    mu = np.mean([m[:, 0] for m in draws.mu], axis=0)
    # labels are coded in sorted order: home = 0, work = 1
    for k, name in enumerate(["home", "work"]):
        post = niw_posterior(NiwHyper.default(1), y[env == name])
        assert mu[k] == pytest.approx(post.mu0[0], abs=0.03)


def test_stratified_needs_labels(rng):
    with pytest.raises(NoLabels):
        fit_stratified(gaussian_dataset(rng))


def test_pooled_imputes_within_bounds(rng):
    ds = gaussian_dataset(rng, n=1, T=50, p=2)
    ser = ds.series[0]
    ser.status[[3, 8], 0] = ObsStatus.BELOW_LOD
    ser.status[[5], 1] = ObsStatus.MAR
    ser.values[ser.status != 0] = np.nan
    ds = Dataset(series=[ser], lod=np.array([-1.0, -10.0]))
    draws = fit_pooled(ds, cfg=McmcConfig(n_iter=200, burn_in=50, seed=4))
    V = np.array(draws.imputations)
    lod_cols = draws.cell_status == ObsStatus.BELOW_LOD
    assert V.shape == (150, 3)
    assert np.all(V[:, lod_cols] <= -1.0)


def test_dpmm_finds_three_clusters():
    rng = np.random.default_rng(5)
    centres = np.array([[-3.0, 0.0], [0.0, 3.0], [3.0, -3.0]])
    series, truth = [], []
    for i in range(2):
        z = rng.integers(3, size=60)
        series.append(make_series(centres[z] + 0.3 * rng.standard_normal((60, 2)), subject_id=f"s{i}"))
        truth.append(z)
    ds = Dataset(series=series, lod=np.full(2, -10.0))
    draws = fit_dpmm(ds, cfg=McmcConfig(n_iter=300, burn_in=150, seed=6))
    assert k_hat(draws) == pytest.approx(3.0, abs=0.3)
    assert np.mean([hamming_distance(z, truth) for z in draws.z]) < 0.02


def test_dpmm_with_one_state_is_the_pooled_model(rng):
    ds = gaussian_dataset(rng, n=2, T=30, p=1)
    draws = fit_dpmm(ds, cfg=McmcConfig(n_iter=2000, burn_in=100, seed=7, k_max=1, initial_K=1))
    post = niw_posterior(NiwHyper.default(1), np.vstack([s.values for s in ds.series]))
    assert np.mean([m[0, 0] for m in draws.mu]) == pytest.approx(post.mu0[0], abs=0.015)
    assert all(k == 1 for k in draws.k_occupied)


def test_independent_fits_one_per_series(two_state_dataset):
    ds, _ = two_state_dataset
    seen = []
    fits = fit_independent(ds, cfg=McmcConfig(n_iter=30, burn_in=10, seed=8), callback=lambda s, d: seen.append(s))
    assert len(fits) == 3 and seen == [0, 1, 2]
    assert all(len(f.z[0]) == 1 and f.z[0][0].size == 60 for f in fits)
    assert series_seed(8, 0) == series_seed(8, 0) != series_seed(8, 1)
