"""Batch command line interface.

    sppm fit --series FILE --stations FILE --mode MODE --out DIR ...
    sppm synth --spec FILE --out DIR
    sppm summarize --draws FILE --loss L --out DIR [--stations FILE] [--series FILE]

The log level is read from ``SPPM_LOG_LEVEL`` (default WARNING).
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as sio
from ._kernels import BACKEND_NAME
from .model import Hyperparams
from .partition import (DistanceSimilarity, NiwParams, NiwPosteriorSimilarity, NiwSimilarity,
                        ThresholdSimilarity)
from .sampler import ChainConfig, PosteriorDraws, run_chain
from .summary import (SearchConfig, _cluster_summaries, average_within_clusters, cocluster,
                      conditional_reestimate, search_point_estimate)

log = logging.getLogger("sppm")

MODES = ("no-clustering", "ppm", "sppm-g1", "sppm-g2", "sppm-g3", "sppm-g4")
EMITS = ("draws", "cocluster", "geojson", "bands")


@dataclass
class RunConfig:
    series: Path
    stations: Path
    out: Path
    mode: str = "sppm-g3"
    loss: str = "vi"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    chains: int = 1
    reestimate: Optional[ChainConfig] = field(
        default_factory=lambda: ChainConfig(n_iter=2000, burn_in=1000))
    search: SearchConfig = field(default_factory=SearchConfig)
    emit: tuple = EMITS

    def validate(self):
        self.series, self.stations, self.out = Path(self.series), Path(self.stations), Path(self.out)
        for p in (self.series, self.stations):
            if not p.is_file():
                raise FileNotFoundError(f"input file not found: {p}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.loss not in ("binder", "vi"):
            raise ValueError(f"unknown loss {self.loss!r}")
        bad = set(self.emit) - set(EMITS)
        if bad:
            raise ValueError(f"unknown emit flags {sorted(bad)}")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        sim = self.hyper.similarity
        if self.mode.startswith("sppm"):
            if sim is None:
                raise ValueError(f"mode {self.mode} needs a similarity")
            if self.hyper.alpha_random:
                raise ValueError("spatial modes keep alpha fixed")
        elif sim is not None:
            raise ValueError(f"mode {self.mode} takes no similarity")
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise PermissionError(f"output directory not writable: {self.out}")
        return self


def mode_hyperparams(mode, coords, base=None, alpha_random=None, omega=1.0, threshold=None,
                     kappa0=1.0, nu0=4.0):
    """Hyperparams for a model variant, built on top of ``base``."""
    base = base or Hyperparams()
    sim = None
    if mode == "sppm-g1":
        sim = DistanceSimilarity(omega)
    elif mode == "sppm-g2":
        if threshold is None:
            raise ValueError("sppm-g2 needs --threshold")
        sim = ThresholdSimilarity(threshold)
    elif mode in ("sppm-g3", "sppm-g4"):
        niw = NiwParams.default_for(coords, kappa0=kappa0, nu0=nu0)
        sim = NiwSimilarity(niw) if mode == "sppm-g3" else NiwPosteriorSimilarity(niw)
    elif mode not in ("ppm", "no-clustering"):
        raise ValueError(f"unknown mode {mode!r}")
    if alpha_random is None:
        alpha_random = mode == "ppm" and base.cohesion == "dp"
    return dataclasses.replace(base, similarity=sim, alpha_random=bool(alpha_random))


def chain_seeds(seed, k):
    """Seeds of k independent chains; a single chain uses ``seed`` itself."""
    if k == 1:
        return [int(seed)]
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def _run_one(args):
    data, hyper, cfg, fixed = args
    draws = run_chain(data, hyper, cfg, fixed_partition=fixed)
    draws.meta.pop("final_state", None)
    return draws


def fit_chains(data, hyper, chain, k=1, fixed_partition=None):
    """Run k seeded chains (in separate processes when k > 1) and pool the draws."""
    cfgs = [dataclasses.replace(chain, seed=s) for s in chain_seeds(chain.seed, k)]
    jobs = [(data, hyper, c, fixed_partition) for c in cfgs]
    if k == 1:
        return [_run_one(jobs[0])]
    with ProcessPoolExecutor(max_workers=min(k, os.cpu_count() or 1)) as ex:
        return list(ex.map(_run_one, jobs))


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    # similarity objects
    d = {"type": type(obj).__name__}
    d.update({k: _jsonable(v) for k, v in vars(obj).items() if not k.startswith("_")})
    return d


def write_outputs(out, data, draws, point, clusters, emit, loss):
    out = Path(out)
    labels = point.partition.as_array()
    if "draws" in emit:
        sio.write_draws(draws, out / "draws.jsonl")
    if "cocluster" in emit:
        sio.write_cocluster(cocluster(draws), data.station_ids, out / "cocluster.csv")
    sio.write_partition(out / "partition.csv", data.station_ids, labels, clusters)
    if "geojson" in emit:
        with open(out / "clusters.geojson", "w", encoding="utf-8") as fh:
            json.dump(sio.geojson_clusters(data, labels, clusters), fh, indent=1)
    if "bands" in emit:
        sio.emit_bands(data, point.partition).to_csv(out / "bands.csv", index=False,
                                                     float_format="%.17g")


def run(config):
    """Fit, summarize and write all artifacts; returns a process exit code."""
    t0 = time.perf_counter()
    config.validate()
    data = sio.ingest(config.series, config.stations)
    log.info("loaded %d stations x %d days", data.n, data.T)
    fixed = np.arange(data.n) if config.mode == "no-clustering" else None
    chains = fit_chains(data, config.hyper, config.chain, config.chains, fixed)
    draws = PosteriorDraws.concatenate(chains)
    t_fit = time.perf_counter() - t0
    point = search_point_estimate(draws, loss=config.loss, config=config.search)
    if fixed is not None:
        # the chain already ran with the partition frozen at singletons
        clusters = _cluster_summaries(np.array([r.phi for r in draws.records]),
                                      np.array([r.tau2 for r in draws.records]),
                                      np.ones(data.n, dtype=int))
    else:
        if config.reestimate is not None:
            re_cfg = dataclasses.replace(config.reestimate, seed=config.chain.seed)
            clusters = conditional_reestimate(data, config.hyper, point.partition, re_cfg).clusters
        else:
            clusters = average_within_clusters(draws, point.partition)
    write_outputs(config.out, data, draws, point, clusters, config.emit, config.loss)
    meta = {
        "config": _jsonable(config),
        "seed": config.chain.seed,
        "chain_seeds": chain_seeds(config.chain.seed, config.chains),
        "backend": BACKEND_NAME,
        "n": data.n, "T": data.T,
        "n_draws": len(draws),
        "acceptance_phi": [c.acceptance_phi for c in chains],
        "mh_step_phi": [c.mh_step_phi for c in chains],
        "seconds_fit": t_fit,
        "seconds_per_iteration": [c.seconds / max(c.iterations, 1) for c in chains],
        "seconds_total": time.perf_counter() - t0,
        "point_estimate": {"loss": point.loss, "value": point.value, "K": point.partition.K},
    }
    with open(Path(config.out) / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    log.info("done: K=%d, %.1fs", point.partition.K, meta["seconds_total"])
    return 0


def synth(spec_path, out):
    with open(spec_path, encoding="utf-8") as fh:
        spec = sio.SyntheticSpec.from_dict(json.load(fh))
    data, truth, atoms = sio.generate_synthetic(spec)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_dataset(data, out / "series.csv", out / "stations.csv")
    with open(out / "truth.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id,cluster,phi,tau2\n")
        for sid, k in zip(data.station_ids, truth.labels):
            fh.write(f"{sid},{k + 1},{atoms[k][0]!r},{atoms[k][1]!r}\n")
    return 0


def summarize(draws_path, loss, out, stations=None, series=None, search=None):
    draws = sio.read_draws(draws_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    point = search_point_estimate(draws, loss=loss, config=search)
    if stations is not None:
        import pandas as pd

        ids = pd.read_csv(stations, dtype={"station_id": str})["station_id"].tolist()
        if len(ids) != draws.n:
            raise ValueError(f"stations file has {len(ids)} rows, draws have n={draws.n}")
    else:
        ids = [str(i + 1) for i in range(draws.n)]
    clusters = average_within_clusters(draws, point.partition)
    sio.write_cocluster(cocluster(draws), ids, out / "cocluster.csv")
    sio.write_partition(out / "partition.csv", ids, point.partition.as_array(), clusters)
    if series is not None and stations is not None:
        data = sio.ingest(series, stations)
        sio.emit_bands(data, point.partition).to_csv(out / "bands.csv", index=False,
                                                     float_format="%.17g")
        with open(out / "clusters.geojson", "w", encoding="utf-8") as fh:
            json.dump(sio.geojson_clusters(data, point.partition.as_array(), clusters), fh,
                      indent=1)
    with open(out / "point_estimate.json", "w", encoding="utf-8") as fh:
        json.dump({"loss": loss, "value": point.value, "K": point.partition.K,
                   "labels": [k + 1 for k in point.partition.labels]}, fh, indent=1)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sppm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the sampler and write all artifacts")
    f.add_argument("--series", required=True)
    f.add_argument("--stations", required=True)
    f.add_argument("--mode", choices=MODES, default="sppm-g3")
    f.add_argument("--iters", type=int, default=15000)
    f.add_argument("--burnin", type=int, default=10000)
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--loss", choices=("binder", "vi"), default="vi")
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--alpha", type=float, default=1.0, help="DP concentration (initial value "
                   "when random)")
    f.add_argument("--fixed-alpha", action="store_true", help="keep alpha fixed in ppm mode")
    f.add_argument("--kaux", type=int, default=3, help="auxiliary atoms per allocation step")
    f.add_argument("--omega", type=float, default=1.0, help="sppm-g1 scale")
    f.add_argument("--threshold", type=float, default=None, help="sppm-g2 distance bound")
    f.add_argument("--kappa0", type=float, default=1.0)
    f.add_argument("--nu0", type=float, default=4.0)
    f.add_argument("--reestimate-iters", type=int, default=2000,
                   help="iterations of the fixed-partition run (0 disables it)")
    f.add_argument("--restarts", type=int, default=16, help="point-estimate search restarts")
    f.add_argument("--parallel-stations", action="store_true")
    f.add_argument("--emit", default=",".join(EMITS),
                   help="comma-separated subset of " + ",".join(EMITS))

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--spec", required=True, help="JSON file with SyntheticSpec fields")
    s.add_argument("--out", required=True)

    m = sub.add_parser("summarize", help="point estimate from an existing draws file")
    m.add_argument("--draws", required=True)
    m.add_argument("--loss", choices=("binder", "vi"), default="vi")
    m.add_argument("--out", required=True)
    m.add_argument("--stations", default=None)
    m.add_argument("--series", default=None)
    m.add_argument("--restarts", type=int, default=16)
    return p


def config_from_args(a):
    import pandas as pd

    coords = pd.read_csv(a.stations)[["lon", "lat"]].to_numpy(float)
    base = Hyperparams(alpha=a.alpha, K_aux=a.kaux)
    alpha_random = False if a.fixed_alpha else None
    hyper = mode_hyperparams(a.mode, coords, base, alpha_random, a.omega, a.threshold,
                             a.kappa0, a.nu0)
    chain = ChainConfig(n_iter=a.iters, burn_in=a.burnin, thin=a.thin, seed=a.seed,
                        parallel_station_updates=a.parallel_stations)
    re = None
    if a.reestimate_iters > 0:
        re = ChainConfig(n_iter=a.reestimate_iters, burn_in=a.reestimate_iters // 2)
    emit = tuple(x for x in a.emit.split(",") if x)
    return RunConfig(a.series, a.stations, a.out, a.mode, a.loss, hyper, chain, a.chains, re,
                     SearchConfig(n_restarts=a.restarts, seed=a.seed), emit)


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SPPM_LOG_LEVEL", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return run(config_from_args(args))
        if args.command == "synth":
            return synth(args.spec, args.out)
        return summarize(args.draws, args.loss, args.out, args.stations, args.series,
                         SearchConfig(n_restarts=args.restarts))
    except Exception as exc:  # report and exit nonzero
        log.debug("failure", exc_info=True)
        print(f"sppm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
