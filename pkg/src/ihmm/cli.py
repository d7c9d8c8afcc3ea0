"""Command-line front end: ``ihmm simulate | fit | evaluate | summarize``.

Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
4 numerical failure (a diagnostic dump is written to the output directory).
Set ``IHMM_LOG`` to a logging level name (e.g. ``INFO``) for progress output.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import fit_dpmm, fit_independent, fit_pooled, fit_stratified
from .data import AffineTransform, CovariateSpec, Dataset, ingest_csv, standardize
from .drawlog import read_draw_logs, to_original_units, write_draw_logs
from .emissions import NiwHyper
from .evaluation import (
    evaluate,
    evaluate_independent,
    microenv_crosstab,
    point_estimate_partition,
    write_metrics,
)
from .exceptions import IHMMError, NoFeasibleState, NonFiniteInput, SingularObservedBlock
from .imputation import collect_imputations, write_summary
from .sampler import McmcConfig, PosteriorDraws, Priors, run, save_checkpoint
from .simulation import SimConfig, generate, read_truth, write_simulation
from .transitions import PsbpPriors

log = logging.getLogger("ihmm")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

JOINT_KINDS = {
    "cyclical": "cyclical",
    "none": "none",
    "ss-cyclical": "subject-cyclical",
    "microenv": "categorical",
    "ss-microenv": "subject-categorical",
}
MODELS = [f"joint-{k}" for k in JOINT_KINDS] + [f"independent-{k}" for k in JOINT_KINDS] + [
    "pooled", "stratified", "dpmm"]


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, cause, chain=None):
        super().__init__(str(cause))
        self.cause = cause
        self.chain = chain


# --------------------------------------------------------------------------- config


def load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def config_digest(cfg: dict, **extra) -> str:
    blob = json.dumps({"config": cfg, **extra}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _known(cls, d: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return d


def mcmc_config(cfg: dict, seed=None, workers=None, **over) -> McmcConfig:
    d = dict(cfg.get("mcmc", {}))
    if seed is not None:
        d["seed"] = seed
    if workers is not None:
        d["workers"] = workers
    d.update(over)
    try:
        return McmcConfig(**_known(McmcConfig, d, "mcmc"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"mcmc: {e}") from None


def priors_from(cfg: dict, p: int) -> Priors:
    d = cfg.get("priors", {})
    try:
        niw = NiwHyper.from_dict(d.get("niw", {}), p)
        psbp = PsbpPriors(**_known(PsbpPriors, d.get("psbp", {}), "priors.psbp"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"priors: {e}") from None
    return Priors(niw=niw, psbp=psbp)


def covariate_spec(model: str, cfg: dict) -> CovariateSpec:
    d = dict(cfg.get("covariates", {}))
    if model in ("pooled", "stratified", "dpmm"):
        kind = "none"
    else:
        kind = JOINT_KINDS[model.split("-", 1)[1]]
    d["kind"] = kind
    try:
        return CovariateSpec.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"covariates: {e}") from None


# --------------------------------------------------------------------------- manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, argv, digest: str, seed, started: str) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": list(argv),
        "config_digest": digest,
        "seed": seed,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": [{"path": str(p.relative_to(out)), "bytes": p.stat().st_size, "sha256": _sha256(p)}
                    for p in files],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------- data


def load_data(data_path, cfg: dict, spec: CovariateSpec) -> Dataset:
    """``data_path`` is a directory holding ``data.csv`` and ``lod.json``, or a CSV
    file whose detection limits come from the config's ``lod`` entry."""
    path = Path(data_path)
    if path.is_dir():
        csv_path = path / "data.csv"
        lod_path = path / "lod.json"
        lod = json.loads(lod_path.read_text(encoding="utf-8")) if lod_path.exists() else cfg.get("lod")
    else:
        csv_path = path
        lod = cfg.get("lod")
    if lod is None:
        raise ConfigError("no detection limits: give 'lod' in the config or a lod.json next to data.csv")
    return ingest_csv(csv_path, spec, np.asarray(lod, dtype=float))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- commands


def cmd_simulate(args, cfg: dict) -> int:
    d = dict(cfg.get("simulation", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        sim = SimConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"simulation: {e}") from None
    args.effective_seed = sim.seed
    ds, truth = generate(sim)
    out = Path(args.out)
    write_simulation(ds, truth, out)
    _write_json(out / "simulation.json", asdict(sim))
    return EXIT_OK


def _progress(n_iter: int):
    def cb(chain):
        if chain.iteration % max(1, n_iter // 20) == 0:
            log.info("iteration %d/%d, K=%d, occupied=%d", chain.iteration, n_iter, chain.K,
                     chain.occupied().size)
    return cb


def _run_guarded(ds, mcfg, priors, resume=None):
    """``run`` that keeps the latest chain so a numerical failure can be dumped."""
    holder = {}
    prog = _progress(mcfg.n_iter)

    def cb(chain):
        holder["chain"] = chain
        prog(chain)

    try:
        return run(ds, mcfg, priors, resume=resume, callback=cb)
    except (np.linalg.LinAlgError, FloatingPointError, NoFeasibleState, NonFiniteInput,
            SingularObservedBlock) as e:
        raise NumericalFailure(e, holder.get("chain")) from e


def _write_fit(draws: PosteriorDraws, ds: Dataset, tf: AffineTransform, out: Path) -> None:
    orig = to_original_units(draws, tf)
    write_draw_logs(orig, out)
    if draws.imputations:
        _, summary = collect_imputations(orig)
        write_summary(summary, out / "imputations_summary.csv")


def cmd_fit(args, cfg: dict) -> int:
    model = args.model or cfg.get("model")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; choose one of {', '.join(MODELS)}")
    spec = covariate_spec(model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_data(args.data, cfg, spec)
    if cfg.get("standardize", True):
        ds, tf = standardize(ds)
    else:
        tf = AffineTransform.identity(ds.p)
    priors = priors_from(cfg, ds.p)
    ckpt = str(out / "checkpoint.bin")
    mcfg = mcmc_config(cfg, seed=args.seed, workers=args.workers, checkpoint_path=ckpt)
    args.effective_seed = mcfg.seed
    _write_json(out / "transform.json", tf.to_dict())
    _write_json(out / "fit.json", {"model": model, "data": str(Path(args.data).resolve()),
                                   "covariates": spec.to_dict(), "mcmc": {**asdict(mcfg), "checkpoint_path": None},
                                   "series": [f"{s.subject_id}/{s.day_id}" for s in ds.series]})
    if model.startswith("independent-"):
        if args.resume:
            raise ConfigError("--resume is not supported for independent fits")
        try:
            fits = fit_independent(ds, replace(mcfg, checkpoint_every=0), priors,
                                   callback=lambda s, _: log.info("series %d done", s + 1))
        except (np.linalg.LinAlgError, FloatingPointError, NoFeasibleState, NonFiniteInput,
                SingularObservedBlock) as e:
            raise NumericalFailure(e) from e
        for s, draws in enumerate(fits):
            sub = ds.with_series([ds.series[s]])
            _write_fit(draws, sub, tf, out / f"series_{s + 1:03d}")
        return EXIT_OK
    if model == "pooled":
        draws = fit_pooled(ds, priors, mcfg)
    elif model == "stratified":
        draws = fit_stratified(ds, priors, mcfg)
    elif model == "dpmm":
        try:
            draws = fit_dpmm(ds, priors, mcfg)
        except (np.linalg.LinAlgError, FloatingPointError, NoFeasibleState) as e:
            raise NumericalFailure(e) from e
    else:
        draws = _run_guarded(ds, mcfg, priors, resume=args.resume)
    _write_fit(draws, ds, tf, out)
    return EXIT_OK


def _load_fit(fit_dir: Path):
    meta = json.loads((fit_dir / "fit.json").read_text(encoding="utf-8"))
    if meta["model"].startswith("independent-"):
        subs = sorted(p for p in fit_dir.iterdir() if p.is_dir() and p.name.startswith("series_"))
        return meta, [read_draw_logs(p) for p in subs]
    return meta, read_draw_logs(fit_dir)


def cmd_evaluate(args, cfg: dict) -> int:
    fits = args.fit
    truths = args.truth
    if len(truths) == 1 and len(fits) > 1:
        truths = truths * len(fits)
    if len(truths) != len(fits):
        raise ConfigError("give one --truth directory per --fit directory (or a single shared one)")
    reports = []
    for fdir, tdir in zip(fits, truths):
        meta, draws = _load_fit(Path(fdir))
        truth = read_truth(tdir)
        independent = args.independent if args.independent is not None else isinstance(draws, list)
        if independent:
            if not isinstance(draws, list):
                raise ConfigError(f"{fdir} does not hold per-series fits")
            reports.append(evaluate_independent(draws, truth))
        else:
            if isinstance(draws, list):
                raise ConfigError(f"{fdir} holds per-series fits; drop --joint")
            reports.append(evaluate(draws, truth))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", reports, labels=[str(Path(f)) for f in fits])
    return EXIT_OK


def cmd_summarize(args, cfg: dict) -> int:
    fit_dir = Path(args.fit)
    meta, draws = _load_fit(fit_dir)
    if isinstance(draws, list):
        raise ConfigError("summaries need a joint fit")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pp = point_estimate_partition(draws)
    with (out / "point_partition.csv").open("w", encoding="utf-8") as fh:
        fh.write("series,t,state\n")
        for s, z in enumerate(pp.z):
            np.savetxt(fh, np.column_stack([np.full(z.size, s), np.arange(z.size), z]), fmt="%d", delimiter=",")
    # model-averaged mean at every time point: average over draws of the mean of its current state
    Z = [np.concatenate(z) for z in draws.z]
    avg = np.mean([np.asarray(mu)[zz] for mu, zz in zip(draws.mu, Z)], axis=0)
    zp = np.concatenate(pp.z)
    data_path = args.data or meta.get("data")
    spec = CovariateSpec.from_dict({**meta.get("covariates", {}), "kind": "none"})
    ds = None
    if data_path and Path(data_path).exists():
        ds = load_data(data_path, cfg, spec)
    values = np.vstack([s.values for s in ds.series]) if ds is not None else None
    p = avg.shape[1]
    with (out / "state_means.csv").open("w", encoding="utf-8") as fh:
        fh.write("state,dim,n,model_averaged_mean,empirical_min,empirical_max\n")
        for k in np.unique(zp):
            sel = zp == k
            for d in range(p):
                lo = hi = np.nan
                if values is not None:
                    v = values[sel, d]
                    v = v[np.isfinite(v)]
                    if v.size:
                        lo, hi = v.min(), v.max()
                fh.write(f"{k},{d + 1},{int(sel.sum())},{float(avg[sel, d].mean())!r},{float(lo)!r},{float(hi)!r}\n")
    if ds is not None and all(s.microenv is not None for s in ds.series):
        ct = microenv_crosstab(pp.z, ds)
        with (out / "crosstab.csv").open("w", encoding="utf-8") as fh:
            fh.write(",".join(["state", *ct.labels, "total"]) + "\n")
            for i, k in enumerate(ct.states):
                fh.write(",".join(map(str, [k, *ct.counts[i].tolist(), int(ct.row_totals[i])])) + "\n")
            fh.write(",".join(map(str, ["total", *ct.col_totals.tolist(), ct.total])) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ihmm", description="Covariate-dependent infinite HMM with imputation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a synthetic dataset with known states")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    fp = sub.add_parser("fit", help="run a model on a dataset")
    fp.add_argument("--data", required=True, help="data directory (data.csv + lod.json) or a CSV file")
    fp.add_argument("--config")
    fp.add_argument("--out", required=True)
    fp.add_argument("--model", choices=MODELS)
    fp.add_argument("--workers", type=int)
    fp.add_argument("--seed", type=int)
    fp.add_argument("--resume", metavar="CHECKPOINT")

    ep = sub.add_parser("evaluate", help="score fits against simulation truth")
    ep.add_argument("--fit", nargs="+", required=True)
    ep.add_argument("--truth", nargs="+", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--config")
    g = ep.add_mutually_exclusive_group()
    g.add_argument("--independent", dest="independent", action="store_true", default=None,
                   help="sum K-hat and average Hamming over per-series fits")
    g.add_argument("--joint", dest="independent", action="store_false")

    mp = sub.add_parser("summarize", help="point partition, state means and crosstab of a fit")
    mp.add_argument("--fit", required=True)
    mp.add_argument("--out", required=True)
    mp.add_argument("--data")
    mp.add_argument("--config")
    return ap


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "summarize": cmd_summarize}


def _dump_failure(out: Path, err: NumericalFailure) -> None:
    out.mkdir(parents=True, exist_ok=True)
    info = {"error": type(err.cause).__name__, "message": str(err.cause),
            "traceback": traceback.format_exception(type(err.cause), err.cause, err.cause.__traceback__)}
    if err.chain is not None:
        info["iteration"] = err.chain.iteration
        info["K"] = err.chain.K
        save_checkpoint(out / "failure_checkpoint.bin", err.chain, PosteriorDraws(), McmcConfig(n_iter=1, burn_in=0))
    _write_json(out / "diagnostic.json", info)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=os.environ.get("IHMM_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    started = _now()
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        code = COMMANDS[args.command](args, cfg)
        digest = config_digest(cfg, command=args.command, model=getattr(args, "model", None),
                               seed=getattr(args, "seed", None))
        write_manifest(out, ["ihmm", *argv], digest, getattr(args, "effective_seed", None), started)
        return code
    except NumericalFailure as e:
        log.error("numerical failure: %s", e)
        _dump_failure(out, e)
        return EXIT_NUMERIC
    except (ConfigError, IHMMError, ValueError, KeyError) as e:
        print(f"ihmm: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"ihmm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
