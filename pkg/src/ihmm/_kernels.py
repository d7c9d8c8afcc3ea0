"""Compiled inner loop of the beam sampler."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def beam_ffbs(loglik, P, u, unif, shared):
    """Forward filtering / backward sampling restricted by slice variables.

    ``loglik[t, k]`` are emission log densities, ``P[t, r, k]`` transition
    probabilities with alpha row ``r`` (row 0 = initial distribution, row
    ``j + 1`` = previous state ``j``, or row 0 for everything when
    ``shared``), ``u[t]`` the slice variables and ``unif[t]`` uniforms used
    for the backward draws.  Transition ``j -> k`` at time ``t`` is allowed
    iff ``P[t, row(j), k] > u[t]``.

    Returns ``(z, ops)``; ``z[0] == -1`` signals that no trajectory is
    compatible with the slices.
    """
    T, K = loglik.shape
    fwd = np.zeros((T, K))
    z = np.empty(T, dtype=np.int64)
    ops = 0
    mx = loglik[0].max()
    tot = 0.0
    for k in range(K):
        if P[0, 0, k] > u[0]:
            fwd[0, k] = np.exp(loglik[0, k] - mx)
            tot += fwd[0, k]
    if tot <= 0.0:
        z[0] = -1
        return z, ops
    for k in range(K):
        fwd[0, k] /= tot
    for t in range(1, T):
        mx = loglik[t].max()
        tot = 0.0
        for k in range(K):
            s = 0.0
            for j in range(K):
                r = 0 if shared else j + 1
                if fwd[t - 1, j] > 0.0 and P[t, r, k] > u[t]:
                    s += fwd[t - 1, j]
            ops += K
            if s > 0.0:
                fwd[t, k] = s * np.exp(loglik[t, k] - mx)
                tot += fwd[t, k]
        if tot <= 0.0:
            z[0] = -1
            return z, ops
        for k in range(K):
            fwd[t, k] /= tot
    # backward sampling
    z[T - 1] = _draw(fwd[T - 1], unif[T - 1])
    w = np.empty(K)
    for t in range(T - 2, -1, -1):
        nxt = z[t + 1]
        tot = 0.0
        for j in range(K):
            r = 0 if shared else j + 1
            if P[t + 1, r, nxt] > u[t + 1]:
                w[j] = fwd[t, j]
            else:
                w[j] = 0.0
            tot += w[j]
        if tot <= 0.0:
            z[0] = -1
            return z, ops
        for j in range(K):
            w[j] /= tot
        z[t] = _draw(w, unif[t])
    return z, ops


@njit(cache=True, nogil=True)
def _draw(p, u):
    c = 0.0
    last = 0
    for k in range(p.size):
        if p[k] > 0.0:
            last = k
            c += p[k]
            if u < c:
                return k
    return last
