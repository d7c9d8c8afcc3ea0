"""Metropolis-within-Gibbs sampler with beam-sampled hidden trajectories.

One sweep updates, in order:

1. slice variables ``u`` and, if needed, new states from the prior;
2. every hidden trajectory by forward filtering / backward sampling over the
   transitions the slices allow;
3. all MAR and below-LOD cells from the missing-data model;
4. emission parameters per state (conjugate NIW, or Metropolis steps on an
   LDL' parameterisation of the covariance);
5. transition parameters by probit data augmentation;
6. trailing states that no trajectory visits are dropped.

Only *trailing* unoccupied states are dropped.  Their sticks carry no
likelihood, so removing them and redrawing them from the prior later is an
exact marginalisation; an unoccupied state in the middle of the stick order
still shapes the probabilities of every later state and is kept.
"""
from __future__ import annotations

import io
import logging
import pickle
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._kernels import beam_ffbs
from .data import Dataset, ObsStatus
from .emissions import EmissionParams, NiwHyper, mh_decomposition_update, posterior_update, sample_prior
from .exceptions import CheckpointError, NoFeasibleState
from .imputation import impute_block
from .transitions import (
    PsbpParams,
    PsbpPriors,
    TransitionBatch,
    augment_and_update,
    empty_params,
    instantiate_state,
    linear_predictor,
    transition_probs,
    truncate_states,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"IHMM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Priors:
    niw: NiwHyper
    psbp: PsbpPriors = field(default_factory=PsbpPriors)

    @classmethod
    def default(cls, p: int) -> "Priors":
        return cls(niw=NiwHyper.default(p))


@dataclass
class McmcConfig:
    n_iter: int = 1000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    workers: int = 1
    imputation_draws_retained: int = 400
    initial_K: int = 10
    k_max: int | None = None             # finite truncation of the state space
    shared: bool = False                 # one stick row for every previous state (no temporal term)
    emission_update: str = "conjugate"   # or "mh-decomposition"
    mh_step: float = 0.1
    tmvn_sweeps: int = 10
    max_states: int = 500
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.emission_update not in ("conjugate", "mh-decomposition"):
            raise ValueError(f"unknown emission_update {self.emission_update!r}")
        if self.k_max is not None and self.initial_K > self.k_max:
            self.initial_K = self.k_max

    def recorded_iterations(self) -> np.ndarray:
        its = np.arange(1, self.n_iter + 1)
        return its[(its > self.burn_in) & ((its - self.burn_in) % self.thin == 0)]

    def imputation_iterations(self) -> np.ndarray:
        rec = self.recorded_iterations()
        r = min(self.imputation_draws_retained, rec.size)
        if r == 0:
            return rec[:0]
        return rec[np.round(np.linspace(0, rec.size - 1, r)).astype(int)]


@dataclass
class ChainState:
    z: list[np.ndarray]
    u: list[np.ndarray]
    psbp: PsbpParams
    emissions: list[EmissionParams]
    values: list[np.ndarray]            # completed data: observed cells plus current imputations
    rng: np.random.Generator            # parameter-update stream
    series_rngs: list[np.random.Generator]
    seed: int
    iteration: int = 0
    ops: int = 0                        # forward-filter inner-loop count
    mh_accepted: int = 0

    @property
    def K(self) -> int:
        return self.psbp.K

    def occupied(self) -> np.ndarray:
        return np.unique(np.concatenate(self.z))


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in output of a run."""

    iterations: list = field(default_factory=list)
    z: list = field(default_factory=list)
    k_occupied: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    mu: list = field(default_factory=list)          # per draw (K, p)
    sigma: list = field(default_factory=list)       # per draw (K, p, p)
    imputation_iterations: list = field(default_factory=list)
    imputations: list = field(default_factory=list)  # per draw (n_cells,)
    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))
    cell_status: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    series_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.iterations)

    def concatenated_z(self, i: int) -> np.ndarray:
        return np.concatenate(self.z[i])


def missing_cells(ds: Dataset):
    """``(n, 3)`` array of (series, t, dim) for every non-observed cell, plus statuses."""
    rows, status = [], []
    for s, ser in enumerate(ds.series):
        t, d = np.nonzero(ser.status != ObsStatus.OBSERVED)
        rows.append(np.column_stack([np.full(t.size, s), t, d]))
        status.append(ser.status[t, d])
    return np.vstack(rows).astype(int), np.concatenate(status).astype(np.int8)


class _Layout:
    """Index bookkeeping for the missing time points of a dataset."""

    def __init__(self, ds: Dataset):
        self.offsets = np.concatenate([[0], np.cumsum([s.T for s in ds.series])])
        st = np.vstack([s.status for s in ds.series])
        rows = np.flatnonzero((st != ObsStatus.OBSERVED).any(axis=1))
        self.rows = rows
        self.series_of = np.searchsorted(self.offsets, rows, side="right") - 1
        self.t_of = rows - self.offsets[self.series_of]
        pats, self.pattern_id = np.unique(st[rows], axis=0, return_inverse=True)
        self.patterns = pats
        self.pattern_id = self.pattern_id.reshape(-1)
        self.n_missing = (pats != ObsStatus.OBSERVED).sum(axis=1)


def _completed(chain: ChainState) -> np.ndarray:
    return np.vstack(chain.values)


def _emission_loglik(emissions, V: np.ndarray) -> np.ndarray:
    """``(N, K)`` log densities of every row of ``V`` under every state."""
    N, p = V.shape
    out = np.empty((N, len(emissions)))
    for k, e in enumerate(emissions):
        L = np.linalg.cholesky(e.sigma)
        zz = np.linalg.solve(L, (V - e.mu).T)
        out[:, k] = -0.5 * (zz * zz).sum(axis=0) - np.log(np.diag(L)).sum() - 0.5 * p * np.log(2 * np.pi)
    return out


def _instantiate(chain: ChainState, priors: Priors) -> None:
    chain.psbp = instantiate_state(chain.psbp, priors.psbp, chain.rng)
    chain.emissions.append(sample_prior(priors.niw, chain.rng))


def _slice_deficit(psbp: PsbpParams, P_tail: np.ndarray, u: np.ndarray) -> bool:
    """True when some uninstantiated state could still exceed a slice."""
    if psbp.capped:
        return False
    if P_tail[0, 0] > u[0]:
        return True
    rows = slice(0, 1) if psbp.shared else slice(1, None)
    return bool(np.any(P_tail[1:, rows] > u[1:, None]))


def _realised_probs(psbp: PsbpParams, pi: np.ndarray, z: np.ndarray) -> np.ndarray:
    prev = np.concatenate([[-1], z[:-1]])
    return pi[np.arange(z.size), psbp.row_of(prev), z]


def _extend_tail(psbp: PsbpParams, subject: int, X: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """Update ``tail[t, r]`` after the newest state was appended to ``psbp``."""
    k = psbp.K - 1
    col = np.broadcast_to(psbp.alpha[:, k], (X.shape[0], psbp.alpha.shape[0]))
    if psbp.q:
        cov = X @ psbp.beta[k]
        if psbp.subject_specific:
            cov = cov + X @ psbp.gamma[subject, k]
        col = col + cov[:, None]
    tail = tail * ndtr(-col[:, :tail.shape[1]])
    if not psbp.shared:
        eta = linear_predictor(psbp, subject, X, rows=[psbp.K])[:, 0]
        tail = np.hstack([tail, np.prod(ndtr(-eta), axis=-1)[:, None]])
    return tail


def sample_slices(chain: ChainState, ds: Dataset, priors: Priors, cfg: McmcConfig) -> list[np.ndarray]:
    """Redraw ``u_t ~ U(0, pi_{z_{t-1} z_t})`` and instantiate states until the
    tail mass of every row falls below its slice.  Returns the transition
    probability arrays of the final state space, one per series."""
    probs, tails = [], []
    for s, ser in enumerate(ds.series):
        pi, tail = transition_probs(chain.psbp, ser.subject, ser.covariates)
        chain.u[s] = chain.series_rngs[s].random(ser.T) * _realised_probs(chain.psbp, pi, chain.z[s])
        probs.append(pi)
        tails.append(tail)
    added = False
    while any(_slice_deficit(chain.psbp, tails[s], chain.u[s]) for s in range(len(ds.series))):
        if chain.K >= cfg.max_states:
            log.warning("state cap %d reached while instantiating for slices", cfg.max_states)
            break
        _instantiate(chain, priors)
        added = True
        if not chain.psbp.capped:
            tails = [_extend_tail(chain.psbp, ser.subject, ser.covariates, tails[s])
                     for s, ser in enumerate(ds.series)]
    if added:
        probs = [transition_probs(chain.psbp, ser.subject, ser.covariates)[0] for ser in ds.series]
    return probs


def sample_trajectory(pi: np.ndarray, loglik: np.ndarray, u: np.ndarray, shared: bool,
                      rng: np.random.Generator):
    """Exact draw of one trajectory given slices, parameters and completed data."""
    unif = rng.random(u.size)
    z, ops = beam_ffbs(loglik, pi, u, unif, shared)
    if z[0] < 0:
        raise NoFeasibleState("no trajectory is compatible with the slice variables")
    return z, ops


def _impute_all(chain: ChainState, ds: Dataset, layout: _Layout, cfg: McmcConfig) -> None:
    if layout.rows.size == 0:
        return
    V = _completed(chain)
    states = np.concatenate(chain.z)[layout.rows]
    order = np.lexsort((layout.rows, layout.pattern_id, states))
    keys = np.column_stack([states[order], layout.pattern_id[order]])
    breaks = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    for grp in np.split(order, breaks):
        pattern = layout.patterns[layout.pattern_id[grp[0]]]
        rows = layout.rows[grp]
        sweeps = 1 if layout.n_missing[layout.pattern_id[grp[0]]] == 1 else cfg.tmvn_sweeps
        V[rows] = impute_block(V[rows], pattern, chain.emissions[states[grp[0]]], ds.lod, chain.rng,
                               sweeps=sweeps)
    chain.values = np.split(V, layout.offsets[1:-1])


def _update_emissions(chain: ChainState, priors: Priors, cfg: McmcConfig) -> None:
    V = _completed(chain)
    Z = np.concatenate(chain.z)
    order = np.argsort(Z, kind="stable")
    counts = np.bincount(Z, minlength=chain.K)
    groups = np.split(V[order], np.cumsum(counts)[:-1])
    for k in range(chain.K):
        if cfg.emission_update == "conjugate" or groups[k].shape[0] == 0:
            chain.emissions[k] = posterior_update(priors.niw, groups[k], chain.rng)
        else:
            chain.emissions[k], acc = mh_decomposition_update(priors.niw, groups[k], chain.emissions[k],
                                                              chain.rng, step=cfg.mh_step)
            chain.mh_accepted += acc


def _transition_batch(chain: ChainState, ds: Dataset) -> TransitionBatch:
    return TransitionBatch.concat((TransitionBatch.from_trajectory(chain.z[s], ser.subject, ser.covariates)
                                   for s, ser in enumerate(ds.series)), ds.q)


def _drop_trailing(chain: ChainState) -> None:
    keep = int(max(z.max() for z in chain.z)) + 1
    if keep < chain.K:
        chain.psbp = truncate_states(chain.psbp, keep)
        del chain.emissions[keep:]


def init_chain(ds: Dataset, cfg: McmcConfig, priors: Priors | None = None) -> ChainState:
    """Start a chain: ``initial_K`` prior states, prior-simulated trajectories,
    MAR cells from the state-conditional Gaussian and LOD cells at ``lod - 0.5``."""
    priors = priors or Priors.default(ds.p)
    seq = np.random.SeedSequence(cfg.seed)
    children = seq.spawn(len(ds.series) + 1)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    series_rngs = [np.random.Generator(np.random.PCG64(c)) for c in children[1:]]
    psbp = empty_params(ds.q, ds.n_subjects, priors.psbp, rng,
                        subject_specific=ds.covariate_spec.subject_specific, shared=cfg.shared, k_max=cfg.k_max)
    chain = ChainState(z=[], u=[], psbp=psbp, emissions=[], values=[], rng=rng, series_rngs=series_rngs,
                       seed=cfg.seed)
    for _ in range(max(1, cfg.initial_K)):
        _instantiate(chain, priors)
    for s, ser in enumerate(ds.series):
        srng = series_rngs[s]
        pi, _ = transition_probs(chain.psbp, ser.subject, ser.covariates)
        z = np.empty(ser.T, dtype=np.int64)
        prev = -1
        for t in range(ser.T):
            w = pi[t, int(chain.psbp.row_of(prev))]
            z[t] = srng.choice(chain.K, p=w / w.sum())
            prev = z[t]
        chain.z.append(z)
        vals = ser.values.copy()
        mar_like = np.where(ser.status == ObsStatus.BELOW_LOD, ObsStatus.MAR, ser.status)
        for t in np.flatnonzero((ser.status != ObsStatus.OBSERVED).any(axis=1)):
            vals[t] = impute_block(vals[t][None, :], mar_like[t], chain.emissions[z[t]], ds.lod, srng,
                                   warm_start=False)[0]
        lod_cells = ser.status == ObsStatus.BELOW_LOD
        vals[lod_cells] = np.broadcast_to(ds.lod - 0.5, vals.shape)[lod_cells]
        chain.values.append(vals)
        chain.u.append(srng.random(ser.T) * _realised_probs(chain.psbp, pi, z))
    return chain


def sweep(chain: ChainState, ds: Dataset, cfg: McmcConfig, priors: Priors | None = None,
          layout: _Layout | None = None, executor: ThreadPoolExecutor | None = None) -> ChainState:
    """One full Metropolis-within-Gibbs update (modifies ``chain`` in place)."""
    priors = priors or Priors.default(ds.p)
    layout = layout or _Layout(ds)
    probs = sample_slices(chain, ds, priors, cfg)
    V = _completed(chain)
    LL = _emission_loglik(chain.emissions, V)
    offsets = np.concatenate([[0], np.cumsum([s.T for s in ds.series])])

    def one(s):
        return sample_trajectory(probs[s], LL[offsets[s]:offsets[s + 1]], chain.u[s], chain.psbp.shared,
                                 chain.series_rngs[s])

    if executor is not None and len(ds.series) > 1:
        results = list(executor.map(one, range(len(ds.series))))
    else:
        results = [one(s) for s in range(len(ds.series))]
    for s, (z, ops) in enumerate(results):
        chain.z[s] = z
        chain.ops += int(ops)
    _impute_all(chain, ds, layout, cfg)
    _update_emissions(chain, priors, cfg)
    chain.psbp = augment_and_update(chain.psbp, _transition_batch(chain, ds), priors.psbp, chain.rng)
    _drop_trailing(chain)
    chain.iteration += 1
    return chain


def complete_loglik(chain: ChainState) -> float:
    """log p(completed data | trajectories, emission parameters)."""
    V = _completed(chain)
    Z = np.concatenate(chain.z)
    LL = _emission_loglik(chain.emissions, V)
    return float(LL[np.arange(Z.size), Z].sum())


def _record(chain: ChainState, draws: PosteriorDraws, impute: bool) -> None:
    draws.iterations.append(chain.iteration)
    draws.z.append([z.copy() for z in chain.z])
    draws.k_occupied.append(int(chain.occupied().size))
    draws.loglik.append(complete_loglik(chain))
    draws.mu.append(np.array([e.mu for e in chain.emissions]))
    draws.sigma.append(np.array([e.sigma for e in chain.emissions]))
    if impute:
        c = draws.cells
        draws.imputation_iterations.append(chain.iteration)
        draws.imputations.append(np.array([chain.values[s][t, d] for s, t, d in c], dtype=float))


def save_checkpoint(path, chain: ChainState, draws: PosteriorDraws, cfg: McmcConfig) -> None:
    """Write a self-describing checkpoint: magic, format version, seed, iteration, payload."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Hqq", CHECKPOINT_VERSION, int(chain.seed), int(chain.iteration)))
    pickle.dump({"chain": chain, "draws": draws, "config": cfg}, buf, protocol=pickle.HIGHEST_PROTOCOL)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, seed, iteration = struct.unpack("<Hqq", raw[4:22])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload = pickle.loads(raw[22:])
    if payload["chain"].iteration != iteration or payload["chain"].seed != seed:
        raise CheckpointError("checkpoint header does not match its payload")
    return payload["chain"], payload["draws"]


def run(ds: Dataset, cfg: McmcConfig, priors: Priors | None = None, *, resume=None,
        callback=None) -> PosteriorDraws:
    """Run ``cfg.n_iter`` sweeps and return the thinned post-burn-in draws.

    ``resume`` is a checkpoint path; the continued run is bit-identical to an
    uninterrupted one.  ``callback(chain)`` is invoked after every sweep.
    """
    priors = priors or Priors.default(ds.p)
    if resume is not None:
        chain, draws = load_checkpoint(resume)
        if chain.seed != cfg.seed:
            raise CheckpointError(f"checkpoint seed {chain.seed} differs from config seed {cfg.seed}")
    else:
        chain = init_chain(ds, cfg, priors)
        cells, status = missing_cells(ds)
        draws = PosteriorDraws(cells=cells, cell_status=status,
                               series_names=[f"{s.subject_id}/{s.day_id}" for s in ds.series])
    layout = _Layout(ds)
    recorded = set(cfg.recorded_iterations().tolist())
    imputed = set(cfg.imputation_iterations().tolist())
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while chain.iteration < cfg.n_iter:
            sweep(chain, ds, cfg, priors, layout=layout, executor=executor)
            if chain.iteration in recorded:
                _record(chain, draws, chain.iteration in imputed)
            if callback is not None:
                callback(chain)
            if cfg.checkpoint_every and cfg.checkpoint_path and chain.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(cfg.checkpoint_path, chain, draws, cfg)
    finally:
        if executor is not None:
            executor.shutdown()
    return draws
