"""Simulate one desk-scale dataset, fit the joint model and two comparisons, print the metrics.

    python3 demos/desk_scale.py [--iters 1000] [--seed 0]
"""
import argparse
import time

from ihmm import CovariateSpec, McmcConfig, SimConfig, generate, run, with_covariates
from ihmm.baselines import fit_dpmm, fit_independent
from ihmm.evaluation import evaluate, evaluate_independent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--missing", type=float, default=0.1)
    args = ap.parse_args()

    ds, truth = generate(SimConfig(n_series=5, T=144, K_true=8, missing_level=args.missing, seed=args.seed))
    cyc = with_covariates(ds, CovariateSpec("cyclical"))
    cfg = McmcConfig(n_iter=args.iters, burn_in=args.iters // 2, seed=args.seed)

    fits = {
        "joint-cyclical": lambda: evaluate(run(cyc, cfg), truth),
        "independent-cyclical": lambda: evaluate_independent(fit_independent(cyc, cfg), truth),
        "dpmm": lambda: evaluate(fit_dpmm(ds, cfg=cfg), truth),
    }
    print(f"{'model':<22}{'K-hat':>8}{'Hamming':>10}{'mu MSE':>9}{'MAR MSE':>9}{'LOD MSE':>9}{'sec':>7}")
    for name, fit in fits.items():
        t0 = time.time()
        m = fit()
        print(f"{name:<22}{m.k_hat:8.2f}{m.hamming:10.3f}{m.mu_mse:9.3f}{m.mar_mse:9.3f}{m.lod_mse:9.3f}"
              f"{time.time() - t0:7.1f}")


if __name__ == "__main__":
    main()
