"""Vectorised truncated normal draws by inversion in log space."""
import numpy as np
from scipy.special import log_ndtr, ndtri_exp


def truncated_normal(mean, sd, lower, upper, rng: np.random.Generator, size=None):
    """Draw ``N(mean, sd^2)`` restricted to ``[lower, upper]``.

    Inversion is carried out on the lower tail (intervals lying above zero are
    reflected), which keeps draws accurate far into either tail.
    """
    mean = np.asarray(mean, dtype=float)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    shape = np.broadcast(a, b).shape if size is None else size
    a = np.broadcast_to(a, shape)
    b = np.broadcast_to(b, shape)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    la = log_ndtr(lo)
    lb = log_ndtr(hi)
    u = rng.random(shape)
    # log Phi(x) = log Phi(hi) + log(1 - u (1 - Phi(lo)/Phi(hi)))
    with np.errstate(divide="ignore"):
        lx = lb + np.log1p(-u * -np.expm1(la - lb))
    x = ndtri_exp(lx)
    x = np.clip(x, lo, hi)
    x = np.where(flip, -x, x)
    return mean + sd * x
