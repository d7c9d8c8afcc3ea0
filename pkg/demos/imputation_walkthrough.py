"""Censor and drop cells from a small simulated dataset, fit the model and compare the
imputations with the removed values.

    python3 demos/imputation_walkthrough.py
"""
import numpy as np

from ihmm import McmcConfig, SimConfig, generate, run
from ihmm.data import ObsStatus
from ihmm.imputation import collect_imputations


def main():
    ds, truth = generate(SimConfig(n_series=3, T=96, K_true=5, missing_level=0.2, seed=3))
    draws = run(ds, McmcConfig(n_iter=600, burn_in=300, seed=3))
    _, summary = collect_imputations(draws)

    removed = truth.removed
    key = {(s, t, d): i for i, (s, t, d) in enumerate(zip(removed.series, removed.t, removed.dim))}
    order = [key[(s, t, d)] for s, t, d in zip(summary.series, summary.t, summary.dim)]
    true = removed.true_value[order]
    inside = (summary.lower <= true) & (true <= summary.upper)
    for code, name in [(ObsStatus.MAR, "MAR"), (ObsStatus.BELOW_LOD, "below LOD")]:
        sel = summary.status == code
        err = summary.mean[sel] - true[sel]
        print(f"{name:>10}: {sel.sum():4d} cells, RMSE {np.sqrt(np.mean(err ** 2)):.3f}, "
              f"bias {err.mean():+.3f}, 95% interval coverage {inside[sel].mean():.2f}")
    lod_cols = draws.cell_status == ObsStatus.BELOW_LOD
    worst = max(np.max(v[lod_cols] - ds.lod[draws.cells[lod_cols, 2]]) for v in draws.imputations)
    print(f"largest below-LOD draw minus its bound: {worst:.3f} (never positive)")


if __name__ == "__main__":
    main()
