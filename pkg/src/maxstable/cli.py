"""Command-line entry point: ``maxstable simulate|fit|diagnose --config <path>``.

Exit codes: 0 success, 1 input error, 2 optimizer did not converge.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_clustering, build_model, build_sites, load_config, resolve
from .data import (block_maxima_with_occurrence, censor_sample, cluster_components, hill_estimate,
                   hill_transform, kendall_tau_matrix, rank_pareto_transform, read_matrix, write_matrix)
from .estimation import OptimizerOptions, fit, fit_smle
from .gaussian import QmcSettings
from .likelihoods import LikelihoodKind
from .mu import default_strategy
from .simulate import SimConfig, sample_max_stable, sample_mda

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _out_json(cfg, base, default_suffix):
    io = cfg["io"]
    if "out_json" in io:
        return resolve(base, io["out_json"])
    return resolve(base, io["data_csv"]).with_suffix(default_suffix)


def cmd_simulate(cfg: dict, base: Path, args) -> int:
    if "simulate" not in cfg:
        raise ConfigError("the simulate command needs a 'simulate' section")
    sim = cfg["simulate"]
    model = build_model(cfg["model"], base)
    sc = SimConfig(model, sim["n"], sim.get("seed", 0), sim.get("noise_mean"), sim.get("truncation", 1000),
                   sim.get("scaling", "pareto"))
    generator = sim.get("generator", "mda")
    sidecar = {"version": __version__, "config": cfg, "generator": generator, "seed": sc.seed,
               "model": model.to_dict()}
    if generator == "mda":
        Y = sample_mda(sc)
    else:
        res = sample_max_stable(sc)
        Y = res.data
        sidecar["truncation"] = sc.truncation
        sidecar["truncation_bound"] = res.truncation_bound
    out = resolve(base, cfg["io"]["data_csv"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(out, Y, [f"y{j}" for j in range(Y.shape[1])])
    _write_json(out.with_suffix(out.suffix + ".json"), sidecar)
    return EXIT_OK


def _load_data(cfg, base) -> np.ndarray:
    path = resolve(base, cfg["io"]["data_csv"])
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    return read_matrix(path)


def _transform(cfg, Y):
    t = cfg.get("transform", {"kind": "none"})
    if t["kind"] == "rank":
        return rank_pareto_transform(Y), None
    if t["kind"] == "hill":
        k = t.get("k", max(1, Y.shape[0] // 10))
        X, hill = hill_transform(Y, k)
        return X, hill
    return Y, None


def cmd_fit(cfg: dict, base: Path, args) -> int:
    model = build_model(cfg["model"], base)
    Y = _load_data(cfg, base)
    if Y.shape[1] != model.dim:
        raise ConfigError(f"data has {Y.shape[1]} columns but the model has {model.dim} components")
    X, hill = _transform(cfg, Y)
    lcfg = cfg.get("likelihood", {"kind": "full"})
    name = lcfg["kind"]
    clustering = None
    if name == "partition":
        if "clustering" not in lcfg:
            raise ConfigError("partition likelihood needs a clustering")
        clustering = build_clustering(lcfg["clustering"], model.dim, build_sites(cfg["model"], base))
    kind = LikelihoodKind(name, clustering, lcfg.get("weights", True))
    n = X.shape[0]
    if name == "censored":
        data = censor_sample(X, lcfg.get("k", max(1, n // 10)))
        if not data:
            raise ConfigError("no exceedances above the threshold")
    elif name == "occurrence":
        data = block_maxima_with_occurrence(X, lcfg.get("k", max(1, n // 10)))
    else:
        data = X
    fcfg = cfg.get("fit", {})
    init = fcfg.get("init")
    if args.init:
        init = [float(v) for v in args.init.split(",")]
    if init is not None and len(init) != len(model.theta):
        raise ConfigError(f"init has {len(init)} values, the model has parameters {list(model.theta.names)}")
    opts = OptimizerOptions(**fcfg.get("optimizer", {}))
    free = fcfg.get("free")
    qmc = QmcSettings(n_points=fcfg.get("qmc_points", 1024))
    cov = fcfg.get("covariance", True)
    if "smle" in fcfg:
        report = fit_smle(data, model, fcfg["smle"]["S"], fcfg["smle"].get("seed", 0), init, opts, kind, free,
                          args.threads, cov)
    else:
        report = fit(data, model, kind, init, opts, default_strategy(model, qmc), free, args.threads, cov,
                     margins_estimated=hill is not None)
    out = report.to_dict()
    out.update({"version": __version__, "config": cfg})
    if clustering is not None:
        out["clustering"] = clustering.as_lists()
    if hill is not None:
        out["hill"] = hill.to_dict()
    _write_json(_out_json(cfg, base, ".fit.json"), out)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_diagnose(cfg: dict, base: Path, args) -> int:
    Y = _load_data(cfg, base)
    n, m = Y.shape
    d = cfg.get("diagnose", {})
    out = {"version": __version__, "config": cfg, "n": n, "m": m}
    max_block = d.get("max_block", 5)
    if m == 1:
        out["kendall_tau"] = [[1.0]]
        out["clustering"] = [[0]]
    else:
        norms = Y.mean(axis=1)
        thr = d.get("norm_threshold", float(np.quantile(norms, 0.9)))
        tau = kendall_tau_matrix(Y, thr)
        out["norm_threshold"] = thr
        out["kendall_tau"] = tau.tolist()
        out["clustering"] = cluster_components(tau, max_block).as_lists()
    X = rank_pareto_transform(Y) if n > 1 else Y
    k = d.get("censor_k", max(1, n // 10))
    recs = censor_sample(X, k)
    counts = Counter(r.exceed_set.members for r in recs)
    total = max(len(recs), 1)
    out["exceedance_frequencies"] = [{"B": list(b), "count": c, "frequency": c / total}
                                     for b, c in sorted(counts.items(), key=lambda kv: (len(kv[0]), kv[0]))]
    if np.all(Y > 0) and n > 2:
        try:
            out["hill"] = hill_estimate(Y, d.get("hill_k", max(1, n // 10))).to_dict()
        except ValueError as err:
            out["hill"] = {"error": str(err)}
    if "out_json" in d:
        target = resolve(base, d["out_json"])
    else:
        target = resolve(base, cfg["io"]["data_csv"]).with_suffix(".diagnose.json")
    _write_json(target, out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxstable", description="Max-stable likelihood inference toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--threads", type=int, default=1, help="worker threads for likelihood evaluation")
    p.add_argument("--init", help="comma-separated initial parameter values (fit only)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg, base = load_config(args.config)
        return COMMANDS[args.command](cfg, base, args)
    except (ConfigError, ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
