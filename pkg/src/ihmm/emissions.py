"""Gaussian emission distributions with Normal-Inverse-Wishart priors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from ._random import truncated_normal
from .exceptions import NonFiniteInput, SingularObservedBlock

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NiwHyper:
    """``mu | Sigma ~ N(mu0, Sigma / lam)``, ``Sigma ~ IW(nu, scale)``."""

    mu0: np.ndarray
    lam: float
    nu: float
    scale: np.ndarray

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        p = mu0.size
        if scale.shape != (p, p):
            raise ValueError("scale must be p x p")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.nu > p - 1:
            raise ValueError("nu must exceed p - 1")
        if not np.allclose(scale, scale.T) or np.linalg.eigvalsh(scale).min() <= 0:
            raise ValueError("scale must be symmetric positive definite")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "scale", scale)

    @property
    def p(self) -> int:
        return self.mu0.size

    @classmethod
    def default(cls, p: int, lam: float = 10.0) -> "NiwHyper":
        # nu = p + 2 gives E(Sigma) = I a priori
        return cls(mu0=np.zeros(p), lam=lam, nu=p + 2.0, scale=np.eye(p))

    def to_dict(self) -> dict:
        return {"mu0": self.mu0.tolist(), "lam": self.lam, "nu": self.nu, "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict, p: int) -> "NiwHyper":
        base = cls.default(p)
        return cls(mu0=d.get("mu0", base.mu0), lam=float(d.get("lam", base.lam)),
                   nu=float(d.get("nu", base.nu)), scale=d.get("scale", base.scale))


@dataclass
class EmissionParams:
    mu: np.ndarray
    sigma: np.ndarray

    def validate(self) -> None:
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-10, rtol=0):
            raise ValueError("sigma is not symmetric")
        if np.linalg.eigvalsh(self.sigma).min() <= 0:
            raise ValueError("sigma is not positive definite")

    def copy(self) -> "EmissionParams":
        return EmissionParams(self.mu.copy(), self.sigma.copy())


def sample_inverse_wishart(nu: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw through the Bartlett decomposition.

    If ``A A'`` is a standard Wishart(nu, I) draw with ``A`` lower triangular
    and ``scale = C C'``, then ``(C A^-T)(C A^-T)'`` is IW(nu, scale).
    """
    p = scale.shape[0]
    C = np.linalg.cholesky(scale)
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(nu - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    Ainv_T = solve_triangular(A, np.eye(p), lower=True).T
    G = C @ Ainv_T
    S = G @ G.T
    return 0.5 * (S + S.T)


def sample_prior(h: NiwHyper, rng: np.random.Generator) -> EmissionParams:
    sigma = sample_inverse_wishart(h.nu, h.scale, rng)
    mu = rng.multivariate_normal(h.mu0, sigma / h.lam, method="cholesky")
    return EmissionParams(mu, sigma)


def logpdf(y, params: EmissionParams):
    """Multivariate normal log density; ``y`` is ``(p,)`` or ``(n, p)``."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("logpdf received non-finite values")
    L = np.linalg.cholesky(params.sigma)
    r = np.atleast_2d(y - params.mu)
    z = solve_triangular(L, r.T, lower=True)
    p = params.mu.size
    out = -0.5 * (z * z).sum(axis=0) - np.log(np.diag(L)).sum() - 0.5 * p * LOG2PI
    return out[0] if y.ndim == 1 else out


def niw_posterior(h: NiwHyper, data) -> NiwHyper:
    """Conjugate NIW hyperparameters after observing ``data`` (n x p)."""
    data = np.asarray(data, dtype=float).reshape(-1, h.p)
    n = data.shape[0]
    if n == 0:
        return h
    ybar = data.mean(axis=0)
    centered = data - ybar
    S = centered.T @ centered
    lam_n = h.lam + n
    mu_n = (h.lam * h.mu0 + n * ybar) / lam_n
    diff = ybar - h.mu0
    scale_n = h.scale + S + (h.lam * n / lam_n) * np.outer(diff, diff)
    return NiwHyper(mu0=mu_n, lam=lam_n, nu=h.nu + n, scale=0.5 * (scale_n + scale_n.T))


def posterior_update(h: NiwHyper, data, rng: np.random.Generator) -> EmissionParams:
    """Draw ``(mu, Sigma)`` from the NIW full conditional given ``data``."""
    return sample_prior(niw_posterior(h, data), rng)


def conditional_gaussian(params: EmissionParams, obs_idx, obs_vals):
    """Law of the unobserved coordinates given the observed ones.

    Returns ``(mean, cov)`` with ``mean = mu_M + S_MO S_OO^-1 (y_O - mu_O)``
    and ``cov = S_MM - S_MO S_OO^-1 S_OM`` (Schur complement).
    """
    mu, S = params.mu, params.sigma
    p = mu.size
    obs_idx = np.asarray(obs_idx, dtype=int)
    mis_idx = np.setdiff1d(np.arange(p), obs_idx)
    if obs_idx.size == 0 or mis_idx.size == 0:
        raise ValueError("observed index set must be a proper nonempty subset")
    S_oo = S[np.ix_(obs_idx, obs_idx)]
    S_mo = S[np.ix_(mis_idx, obs_idx)]
    try:
        cf = cho_factor(S_oo, lower=True)
    except np.linalg.LinAlgError:
        raise SingularObservedBlock("observed covariance block is not positive definite") from None
    resid = np.asarray(obs_vals, dtype=float) - mu[obs_idx]
    mean = mu[mis_idx] + S_mo @ cho_solve(cf, resid)
    cov = S[np.ix_(mis_idx, mis_idx)] - S_mo @ cho_solve(cf, S_mo.T)
    return mean, 0.5 * (cov + cov.T)


def sample_truncated_mvn(mean, cov, upper, rng: np.random.Generator, sweeps: int = 10, x0=None) -> np.ndarray:
    """Coordinate-wise Gibbs sampler for ``N(mean, cov)`` restricted to ``x <= upper``.

    Coordinates with ``upper = +inf`` are unconstrained.  The chain starts at
    ``x0`` when given (it must be feasible), otherwise at the mean with
    constrained coordinates moved to ``bound - 1e-6``.  ``mean`` may be a
    batch ``(m, n)`` of independent targets sharing ``cov`` and ``upper``.
    """
    mean = np.asarray(mean, dtype=float)
    batched = mean.ndim == 2
    M = np.atleast_2d(mean)
    upper = np.asarray(upper, dtype=float)
    bounded = np.isfinite(upper)
    if not bounded.any():
        out = M + rng.standard_normal(M.shape) @ np.linalg.cholesky(cov).T
        return out if batched else out[0]
    if x0 is None:
        X = M.copy()
        X[:, bounded] = np.minimum(X[:, bounded], upper[bounded] - 1e-6)
    else:
        X = np.array(np.atleast_2d(x0), dtype=float)
    prec = np.linalg.inv(cov)
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    n = M.shape[1]
    for _ in range(sweeps):
        for d in range(n):
            # conditional mean of x_d given the rest, via the precision matrix
            others = (X - M) @ prec[d] - prec[d, d] * (X[:, d] - M[:, d])
            m = M[:, d] - others / prec[d, d]
            if bounded[d]:
                X[:, d] = truncated_normal(m, cond_sd[d], -np.inf, upper[d], rng)
            else:
                X[:, d] = m + cond_sd[d] * rng.standard_normal(m.size)
    return X if batched else X[0]


def _ldl_params(sigma):
    """``sigma = M D M'`` with ``M`` unit lower triangular; returns (M, d)."""
    L = np.linalg.cholesky(sigma)
    dsqrt = np.diag(L)
    return L / dsqrt, dsqrt ** 2


def ldl_log_jacobian(logd: np.ndarray) -> float:
    """log |d Sigma / d(M strict-lower, log d)| for ``Sigma = M diag(exp(logd)) M'``."""
    p = logd.size
    return float(np.sum((p - np.arange(p)) * logd))


def _sigma_log_target(M, logd, Q, df):
    # -df/2 log|Sigma| - tr(Sigma^-1 Q)/2 + log Jacobian
    Minv_Q = solve_triangular(M, Q, lower=True, unit_diagonal=True)
    W = solve_triangular(M, Minv_Q.T, lower=True, unit_diagonal=True)
    tr = np.sum(np.diag(W) * np.exp(-logd))
    return -0.5 * df * logd.sum() - 0.5 * tr + ldl_log_jacobian(logd)


def mh_decomposition_update(h: NiwHyper, data, current: EmissionParams, rng: np.random.Generator,
                            step: float = 0.1) -> tuple[EmissionParams, int]:
    """Metropolis-within-Gibbs update on ``Sigma = M D M'``.

    Each strict-lower element of ``M`` and each ``log d_i`` gets a Gaussian
    random-walk proposal; afterwards ``mu | Sigma`` is drawn exactly.
    Returns the new parameters and the number of accepted proposals.
    """
    data = np.asarray(data, dtype=float).reshape(-1, h.p)
    n = data.shape[0]
    p = h.p
    mu = current.mu
    r = data - mu
    dm = mu - h.mu0
    Q = h.scale + r.T @ r + h.lam * np.outer(dm, dm)
    df = h.nu + p + 2 + n
    M, d = _ldl_params(current.sigma)
    logd = np.log(d)
    cur = _sigma_log_target(M, logd, Q, df)
    accepted = 0
    coords = [("m", i, j) for i in range(p) for j in range(i)] + [("d", i, i) for i in range(p)]
    for kind, i, j in coords:
        M2, logd2 = M.copy(), logd.copy()
        if kind == "m":
            M2[i, j] += step * rng.standard_normal()
        else:
            logd2[i] += step * rng.standard_normal()
        prop = _sigma_log_target(M2, logd2, Q, df)
        if np.log(rng.random()) < prop - cur:
            M, logd, cur = M2, logd2, prop
            accepted += 1
    sigma = (M * np.exp(logd)) @ M.T
    sigma = 0.5 * (sigma + sigma.T)
    post = niw_posterior(h, data)
    mu_new = rng.multivariate_normal(post.mu0, sigma / post.lam, method="cholesky")
    return EmissionParams(mu_new, sigma), accepted
