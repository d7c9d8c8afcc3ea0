"""Independent reference computations used by several test modules."""
import itertools

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invgamma, norm


def niw_grid_moments(y, mu0=0.0, lam=10.0, nu=3.0, scale=1.0, n_grid=1200):
    """Posterior moments of (mu, sigma2) for p = 1 by brute-force quadrature.

    The unnormalised density prior x likelihood is summed on a grid over
    (log sigma2, mu); for each sigma2 the mu grid is wide enough to cover the
    prior centre, the data mean and many conditional standard deviations.
    Nothing from the closed-form conjugate update is used.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    ybar = y.mean()
    s2 = (np.sum((y - ybar) ** 2) + scale) / (n + 1)
    ls = np.linspace(np.log(s2) - 12.0, np.log(s2) + 10.0, n_grid)
    S2 = np.exp(ls)[:, None]
    half = 12.0 * np.sqrt(S2 / (n + lam)) + abs(ybar - mu0) / 2.0
    u = np.linspace(-1.0, 1.0, n_grid)[None, :]
    M = (mu0 + ybar) / 2.0 + half * u
    logp = invgamma.logpdf(S2, nu / 2.0, scale=scale / 2.0) + np.log(S2) + np.log(half)
    logp = logp + norm.logpdf(M, mu0, np.sqrt(S2 / lam))
    ss = n * (M - ybar) ** 2 + np.sum((y - ybar) ** 2)
    logp = logp - 0.5 * n * np.log(2 * np.pi * S2) - 0.5 * ss / S2
    w = np.exp(logp - logsumexp(logp))
    mean_mu = np.sum(w * M)
    LS = np.broadcast_to(np.log(S2), M.shape)
    return {"mean_mu": mean_mu, "var_mu": np.sum(w * (M - mean_mu) ** 2),
            "mean_sd": np.sum(w * np.sqrt(S2)), "mean_logvar": np.sum(w * LS)}


def brute_force_hamming(a, b):
    """Misclassified fraction under the best injective relabelling, by enumeration."""
    a, b = np.asarray(a), np.asarray(b)
    la, lb = list(np.unique(a)), list(np.unique(b))
    m = max(len(la), len(lb))
    la += [None] * (m - len(la))
    lb += [None] * (m - len(lb))
    overlap = {(x, y): int(np.sum((a == x) & (b == y))) for x in la if x is not None for y in lb if y is not None}
    best = 0
    for perm in itertools.permutations(range(m)):
        tot = sum(overlap.get((la[i], lb[perm[i]]), 0) for i in range(m))
        best = max(best, tot)
    return 1.0 - best / a.size


def enumerate_hmm_posterior(log_init, log_trans, loglik):
    """Exact posterior over every trajectory of a small HMM.

    ``log_init`` is (K,), ``log_trans`` is (T, K, K) with ``log_trans[t]``
    the law of z_t given z_{t-1} (row = previous), ``loglik`` is (T, K).
    Returns (trajectories, probabilities).
    """
    T, K = loglik.shape
    trajs = np.array(list(itertools.product(range(K), repeat=T)))
    lp = log_init[trajs[:, 0]] + loglik[0, trajs[:, 0]]
    for t in range(1, T):
        lp += log_trans[t, trajs[:, t - 1], trajs[:, t]] + loglik[t, trajs[:, t]]
    return trajs, np.exp(lp - logsumexp(lp))


def batch_means_se(x, n_batches=50):
    """Standard error of the mean of a correlated chain by batch means."""
    x = np.asarray(x, dtype=float)
    m = x.size // n_batches
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return b.std(ddof=1) / np.sqrt(n_batches)
