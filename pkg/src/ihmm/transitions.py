"""Covariate-dependent probit stick-breaking transition distributions.

The probability of moving from state ``j`` to state ``k`` given covariates
``x`` for subject ``i`` is::

    pi_jk(x) = Phi(eta_jk) * prod_{l<k} (1 - Phi(eta_jl)),
    eta_jl   = alpha_jl + x' beta_l + x' gamma_il

States are 0-based.  ``alpha`` is stored with one extra leading row that
holds the sticks of the initial-state distribution, so row ``j + 1`` belongs
to previous state ``j``.  In *shared* mode (the temporal-free mixture) a
single row serves every previous state.

With a finite cap ``k_max`` the last stick is closed (``Phi = 1``) once
``K == k_max``, which gives a finite-state truncation of the process.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from ._random import truncated_normal
from .exceptions import IndexOutOfRange


@dataclass(frozen=True)
class PsbpPriors:
    beta_var: float = 1.0
    sigma_alpha_shape: float = 1.0
    sigma_alpha_rate: float = 1.0
    m_alpha_mean: float = 0.0
    m_alpha_var: float = 1.0
    v_alpha_shape: float = 1.0
    v_alpha_rate: float = 1.0
    kappa_shape: float = 1.0
    kappa_rate: float = 1.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "PsbpPriors":
        return cls(**{k: float(v) for k, v in (d or {}).items()})

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PsbpParams:
    alpha: np.ndarray             # (K + 1, K), or (1, K) when shared
    beta: np.ndarray              # (K, q)
    gamma: np.ndarray             # (n_subjects, K, q)
    sigma2_alpha: float = 1.0
    m_alpha: float = 0.0
    v_alpha: float = 1.0
    kappa2: float = 1.0
    subject_specific: bool = False
    shared: bool = False
    k_max: int | None = None

    @property
    def K(self) -> int:
        return self.alpha.shape[1]

    @property
    def q(self) -> int:
        return self.beta.shape[1]

    @property
    def n_subjects(self) -> int:
        return self.gamma.shape[0]

    @property
    def alpha_init(self) -> np.ndarray:
        return self.alpha[0]

    @property
    def alpha_transition(self) -> np.ndarray:
        """``K x K`` intercepts, row = previous state, column = stick."""
        if self.shared:
            return np.repeat(self.alpha, self.K, axis=0)
        return self.alpha[1:]

    @property
    def capped(self) -> bool:
        return self.k_max is not None and self.K >= self.k_max

    def row_of(self, prev):
        """Row of ``alpha`` used when the previous state is ``prev`` (``-1`` = initial)."""
        prev = np.asarray(prev)
        if self.shared:
            return np.zeros_like(prev)
        return prev + 1

    def copy(self) -> "PsbpParams":
        return replace(self, alpha=self.alpha.copy(), beta=self.beta.copy(), gamma=self.gamma.copy())


def empty_params(q: int, n_subjects: int, priors: PsbpPriors, rng: np.random.Generator, *,
                 subject_specific: bool = False, shared: bool = False, k_max: int | None = None) -> PsbpParams:
    """K = 0 parameters with hyperparameters drawn from their priors."""
    params = PsbpParams(alpha=np.zeros((1, 0)), beta=np.zeros((0, q)), gamma=np.zeros((n_subjects, 0, q)),
                        subject_specific=subject_specific and q > 0, shared=shared, k_max=k_max)
    _draw_hyper_from_prior(params, priors, rng)
    return params


def _draw_hyper_from_prior(params: PsbpParams, priors: PsbpPriors, rng) -> None:
    params.sigma2_alpha = 1.0 / rng.gamma(priors.sigma_alpha_shape, 1.0 / priors.sigma_alpha_rate)
    params.m_alpha = rng.normal(priors.m_alpha_mean, np.sqrt(priors.m_alpha_var))
    params.v_alpha = 1.0 / rng.gamma(priors.v_alpha_shape, 1.0 / priors.v_alpha_rate)
    params.kappa2 = 1.0 / rng.gamma(priors.kappa_shape, 1.0 / priors.kappa_rate)


def _diag_mask(params: PsbpParams) -> np.ndarray:
    """Boolean mask over ``alpha`` marking self-transition intercepts."""
    mask = np.zeros(params.alpha.shape, dtype=bool)
    if not params.shared:
        K = params.K
        mask[np.arange(1, K + 1), np.arange(K)] = True
    return mask


def linear_predictor(params: PsbpParams, subject: int, X: np.ndarray, rows=None) -> np.ndarray:
    """``eta[t, r, l]`` for every time point, alpha row and stick.

    ``X`` is ``(T, q)``.  ``rows`` restricts the alpha rows (default: all).
    """
    X = np.atleast_2d(X)
    alpha = params.alpha if rows is None else params.alpha[rows]
    eta = np.broadcast_to(alpha, (X.shape[0],) + alpha.shape).copy()
    if params.q:
        cov = X @ params.beta.T
        if params.subject_specific:
            cov = cov + X @ params.gamma[subject].T
        eta += cov[:, None, :]
    return eta


def stick_weights(params: PsbpParams, eta: np.ndarray):
    """Stick probabilities ``pi`` and tail mass for linear predictors ``eta[..., K]``."""
    v = ndtr(eta)
    c = ndtr(-eta)
    if params.capped:
        v[..., -1] = 1.0
        c[..., -1] = 0.0
    cum = np.cumprod(c, axis=-1)
    prefix = np.ones_like(v)
    prefix[..., 1:] = cum[..., :-1]
    pi = v * prefix
    tail = cum[..., -1] if v.shape[-1] else np.ones(v.shape[:-1])
    return pi, tail


def transition_probs(params: PsbpParams, subject: int, X: np.ndarray):
    """``pi[t, r, k]`` and ``tail[t, r]`` for all alpha rows of one series."""
    return stick_weights(params, linear_predictor(params, subject, X))


def _check_state(params, j, k):
    K = params.K
    if j is not None and not 0 <= j < K:
        raise IndexOutOfRange(f"previous state {j} outside 0..{K - 1}")
    if k is not None and not 0 <= k < K:
        raise IndexOutOfRange(f"state {k} outside 0..{K - 1}")


def stick_probability(params: PsbpParams, j, k: int, i: int, x) -> float:
    """Probability of moving from ``j`` (``None`` = initial distribution) to ``k``."""
    _check_state(params, j, k)
    row = int(params.row_of(-1 if j is None else j))
    eta = linear_predictor(params, i, np.atleast_2d(np.asarray(x, dtype=float).reshape(1, -1)), rows=[row])
    pi, _ = stick_weights(params, eta)
    return float(pi[0, 0, k])


def tail_mass(params: PsbpParams, j, i: int, x, K: int | None = None) -> float:
    """Mass left after the first ``K`` sticks of row ``j``."""
    K = params.K if K is None else K
    if not 0 <= K <= params.K:
        raise IndexOutOfRange(f"K={K} outside 0..{params.K}")
    if K == 0:
        return 1.0
    _check_state(params, j, None)
    row = int(params.row_of(-1 if j is None else j))
    eta = linear_predictor(params, i, np.asarray(x, dtype=float).reshape(1, -1), rows=[row])[..., :K]
    c = ndtr(-eta)
    if params.capped and K == params.K:
        c[..., -1] = 0.0
    return float(np.prod(c))


def instantiate_state(params: PsbpParams, priors: PsbpPriors, rng: np.random.Generator) -> PsbpParams:
    """Append one state with all of its sticks drawn from the prior."""
    K = params.K
    sd_off = np.sqrt(params.sigma2_alpha)
    n_rows = params.alpha.shape[0]
    new_col = rng.normal(0.0, sd_off, size=n_rows)
    if params.shared:
        alpha = np.hstack([params.alpha, new_col[:, None]])
    else:
        new_row = rng.normal(0.0, sd_off, size=K + 1)
        new_row[K] = rng.normal(params.m_alpha, np.sqrt(params.v_alpha))
        alpha = np.vstack([np.hstack([params.alpha, new_col[:, None]]), new_row[None, :]])
    q = params.q
    beta = np.vstack([params.beta, rng.normal(0.0, np.sqrt(priors.beta_var), size=(1, q))])
    if params.subject_specific:
        g = rng.normal(0.0, np.sqrt(params.kappa2), size=(params.n_subjects, 1, q))
    else:
        g = np.zeros((params.n_subjects, 1, q))
    gamma = np.concatenate([params.gamma, g], axis=1)
    return replace(params, alpha=alpha, beta=beta, gamma=gamma)


def truncate_states(params: PsbpParams, n_keep: int) -> PsbpParams:
    """Keep only the first ``n_keep`` states (drops trailing sticks and rows)."""
    rows = 1 if params.shared else n_keep + 1
    return replace(params, alpha=params.alpha[:rows, :n_keep].copy(), beta=params.beta[:n_keep].copy(),
                   gamma=params.gamma[:, :n_keep].copy())


@dataclass
class TransitionBatch:
    """Realised transitions ``prev -> cur`` (``prev = -1`` for a first time point)."""

    subject: np.ndarray
    prev: np.ndarray
    cur: np.ndarray
    X: np.ndarray

    @classmethod
    def empty(cls, q: int) -> "TransitionBatch":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros((0, q)))

    @classmethod
    def concat(cls, batches, q: int) -> "TransitionBatch":
        batches = list(batches)
        if not batches:
            return cls.empty(q)
        return cls(np.concatenate([b.subject for b in batches]), np.concatenate([b.prev for b in batches]),
                   np.concatenate([b.cur for b in batches]), np.vstack([b.X for b in batches]))

    @classmethod
    def from_trajectory(cls, z: np.ndarray, subject: int, X: np.ndarray) -> "TransitionBatch":
        prev = np.concatenate([[-1], z[:-1]])
        return cls(np.full(z.size, subject), prev, z.copy(), X)


@dataclass
class _Latents:
    row: np.ndarray
    stick: np.ndarray
    subject: np.ndarray
    cur: np.ndarray
    X: np.ndarray


def _expand(params: PsbpParams, tr: TransitionBatch) -> _Latents:
    """One latent per (transition, stick <= realised state), skipping a closed final stick."""
    counts = _counts(params, tr)
    m = np.repeat(np.arange(counts.size), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    stick = np.arange(m.size) - offsets
    return _Latents(row=params.row_of(tr.prev)[m], stick=stick, subject=tr.subject[m], cur=tr.cur[m], X=tr.X[m])


def _group_regression(X, r, groups, n_groups, prior_var, rng):
    """Independent Bayesian linear regressions ``r ~ N(X b_g, 1)``, ``b_g ~ N(0, prior_var I)``."""
    q = X.shape[1]
    XX = (X[:, :, None] * X[:, None, :]).reshape(len(r), q * q)
    prec = np.empty((n_groups, q * q))
    for c in range(q * q):
        prec[:, c] = np.bincount(groups, weights=XX[:, c], minlength=n_groups)
    prec = prec.reshape(n_groups, q, q) + np.eye(q) / prior_var
    Xr = np.empty((n_groups, q))
    for c in range(q):
        Xr[:, c] = np.bincount(groups, weights=X[:, c] * r, minlength=n_groups)
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, Xr[:, :, None])[:, :, 0]
    z = rng.standard_normal((n_groups, q))
    # L' e = z gives e ~ N(0, prec^-1)
    e = np.linalg.solve(np.swapaxes(L, 1, 2), z[:, :, None])[:, :, 0]
    return mean + e


def augment_and_update(params: PsbpParams, transitions: TransitionBatch, priors: PsbpPriors,
                       rng: np.random.Generator) -> PsbpParams:
    """One Gibbs pass over the PSBP parameters by probit data augmentation.

    Latent ``w ~ N(eta, 1)`` is drawn for every stick up to the realised one
    (positive for the realised stick, non-positive for the sticks passed
    over); then intercepts, covariate effects, subject effects and the
    variance hyperparameters are drawn from their full conditionals.
    """
    out = params.copy()
    K, q = out.K, out.q
    if K == 0:
        _draw_hyper_from_prior(out, priors, rng)
        return out
    lat = _expand(out, transitions)
    n = lat.stick.size

    def cov_part(p):
        if not q or n == 0:
            return np.zeros(n)
        c = np.einsum("nq,nq->n", lat.X, p.beta[lat.stick])
        if p.subject_specific:
            c = c + np.einsum("nq,nq->n", lat.X, p.gamma[lat.subject, lat.stick])
        return c

    # latent utilities
    eta = out.alpha[lat.row, lat.stick] + cov_part(out)
    positive = lat.stick == lat.cur
    lower = np.where(positive, 0.0, -np.inf)
    upper = np.where(positive, np.inf, 0.0)
    w = truncated_normal(eta, 1.0, lower, upper, rng) if n else np.zeros(0)

    # intercepts
    n_rows = out.alpha.shape[0]
    cell = lat.row * K + lat.stick
    resid = w - cov_part(out)
    sums = np.bincount(cell, weights=resid, minlength=n_rows * K).reshape(n_rows, K)
    cnt = np.bincount(cell, minlength=n_rows * K).reshape(n_rows, K)
    diag = _diag_mask(out)
    m0 = np.where(diag, out.m_alpha, 0.0)
    v0 = np.where(diag, out.v_alpha, out.sigma2_alpha)
    prec = 1.0 / v0 + cnt
    mean = (m0 / v0 + sums) / prec
    out.alpha = mean + rng.standard_normal(mean.shape) / np.sqrt(prec)

    # global covariate effects
    if q:
        r = w - out.alpha[lat.row, lat.stick]
        if out.subject_specific:
            r = r - np.einsum("nq,nq->n", lat.X, out.gamma[lat.subject, lat.stick])
        out.beta = _group_regression(lat.X, r, lat.stick, K, priors.beta_var, rng)
        if out.subject_specific:
            r = w - out.alpha[lat.row, lat.stick] - np.einsum("nq,nq->n", lat.X, out.beta[lat.stick])
            g = _group_regression(lat.X, r, lat.subject * K + lat.stick, out.n_subjects * K, out.kappa2, rng)
            out.gamma = g.reshape(out.n_subjects, K, q)

    # hyperparameters
    off = out.alpha[~diag]
    out.sigma2_alpha = 1.0 / rng.gamma(priors.sigma_alpha_shape + off.size / 2.0,
                                       1.0 / (priors.sigma_alpha_rate + 0.5 * np.sum(off ** 2)))
    if out.shared:
        out.m_alpha = rng.normal(priors.m_alpha_mean, np.sqrt(priors.m_alpha_var))
        out.v_alpha = 1.0 / rng.gamma(priors.v_alpha_shape, 1.0 / priors.v_alpha_rate)
    else:
        d = out.alpha[diag]
        prec_m = 1.0 / priors.m_alpha_var + d.size / out.v_alpha
        mean_m = (priors.m_alpha_mean / priors.m_alpha_var + d.sum() / out.v_alpha) / prec_m
        out.m_alpha = rng.normal(mean_m, 1.0 / np.sqrt(prec_m))
        out.v_alpha = 1.0 / rng.gamma(priors.v_alpha_shape + d.size / 2.0,
                                      1.0 / (priors.v_alpha_rate + 0.5 * np.sum((d - out.m_alpha) ** 2)))
    if out.subject_specific:
        out.kappa2 = 1.0 / rng.gamma(priors.kappa_shape + out.gamma.size / 2.0,
                                     1.0 / (priors.kappa_rate + 0.5 * np.sum(out.gamma ** 2)))
    else:
        out.kappa2 = 1.0 / rng.gamma(priors.kappa_shape, 1.0 / priors.kappa_rate)
    return out


def _counts(params, tr):
    counts = tr.cur + 1
    if params.capped:
        counts = np.where(tr.cur == params.K - 1, tr.cur, counts)
    return counts
