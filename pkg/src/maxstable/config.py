"""Run configuration: JSON schema, validation and model construction."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .combinatorics import Partition
from .data import read_matrix
from .spatial import MaternParams, SiteSet
from .spectral import (ArchimedeanClusterSpec, ClusteredArchimedean, GaussianSpectral, LogNormalSpectral,
                       SpectralModel)

SCHEMA_VERSION = 1

_pos = {"type": "number", "exclusiveMinimum": 0}
_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

CLUSTER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["members", "copula", "theta", "margin", "alpha"],
    "properties": {
        "members": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "copula": {"enum": ["gumbel", "clayton"]},
        "theta": _pos,
        "margin": {"enum": ["lognormal", "weibull", "frechet"]},
        "alpha": _pos,
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gaussian", "lognormal", "clustered"]},
        "sites_csv": {"type": "string"},
        "sites": _matrix,
        "random_sites": {
            "type": "object", "additionalProperties": False, "required": ["m"],
            "properties": {"m": {"type": "integer", "minimum": 1}, "side": _pos, "seed": {"type": "integer"}},
        },
        "matern": {
            "type": "object", "additionalProperties": False, "required": ["c", "nu"],
            "properties": {"c": _pos, "nu": _pos},
        },
        "cov_csv": {"type": "string"},
        "cov": _matrix,
        "family": {"enum": ["geometric", "brown_resnick"]},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "clusters": {"type": "array", "items": CLUSTER_SCHEMA, "minItems": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "model", "io"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "model": MODEL_SCHEMA,
        "simulate": {
            "type": "object", "additionalProperties": False, "required": ["n"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "generator": {"enum": ["mda", "max_stable"]},
                "noise_mean": _pos,
                "truncation": {"type": "integer", "minimum": 1},
                "scaling": {"enum": ["pareto", "inverse_uniform"]},
            },
        },
        "transform": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["none", "rank", "hill"]}, "k": {"type": "integer", "minimum": 1}},
        },
        "likelihood": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["full", "partition", "pairwise", "censored", "occurrence"]},
                "clustering": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                        {"type": "object", "additionalProperties": False, "required": ["max_block"],
                         "properties": {"max_block": {"type": "integer", "minimum": 1},
                                        "seed": {"type": "integer"}}},
                    ]
                },
                "k": {"type": "integer", "minimum": 1},
                "weights": {"type": "boolean"},
            },
        },
        "fit": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "init": {"type": "array", "items": {"type": "number"}},
                "free": {"type": "array", "items": {"type": "string"}},
                "optimizer": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "max_iters": {"type": "integer", "minimum": 1},
                        "init_scale": _pos, "ftol": _pos, "xtol": _pos,
                        "restarts": {"type": "integer", "minimum": 0},
                    },
                },
                "smle": {
                    "type": "object", "additionalProperties": False, "required": ["S"],
                    "properties": {"S": {"type": "integer", "minimum": 100}, "seed": {"type": "integer"}},
                },
                "qmc_points": {"type": "integer", "minimum": 16},
                "covariance": {"type": "boolean"},
            },
        },
        "diagnose": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "norm_threshold": {"type": "number"},
                "max_block": {"type": "integer", "minimum": 1},
                "hill_k": {"type": "integer", "minimum": 1},
                "censor_k": {"type": "integer", "minimum": 1},
                "out_json": {"type": "string"},
            },
        },
        "io": {
            "type": "object", "additionalProperties": False, "required": ["data_csv"],
            "properties": {"data_csv": {"type": "string"}, "out_json": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    """Invalid run configuration."""


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    validate_config(cfg)
    return cfg, path.resolve().parent


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}") from None


def resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def build_sites(mcfg: dict, base: Path) -> SiteSet | None:
    if "sites" in mcfg:
        return SiteSet(mcfg["sites"])
    if "sites_csv" in mcfg:
        return SiteSet.read_csv(resolve(base, mcfg["sites_csv"]))
    if "random_sites" in mcfg:
        r = mcfg["random_sites"]
        return SiteSet.uniform_square(r["m"], r.get("side", 2.0), r.get("seed", 0))
    return None


def build_model(mcfg: dict, base: Path) -> SpectralModel:
    kind = mcfg["kind"]
    sites = build_sites(mcfg, base)
    if kind == "gaussian":
        if "matern" in mcfg:
            if sites is None:
                raise ConfigError("a Matern Gaussian model needs sites")
            return GaussianSpectral.from_sites(sites, MaternParams(**mcfg["matern"]))
        cov = _cov(mcfg, base)
        if cov is None:
            raise ConfigError("gaussian model needs matern+sites or a correlation matrix")
        return GaussianSpectral(cov)
    if kind == "lognormal":
        family = mcfg.get("family")
        params = mcfg.get("params", {})
        if family == "geometric":
            if sites is None:
                raise ConfigError("geometric log-normal model needs sites")
            return LogNormalSpectral.geometric(sites, params["sigma2"], MaternParams(params["c"], params["nu"]))
        if family == "brown_resnick":
            if sites is None:
                raise ConfigError("Brown-Resnick model needs sites")
            return LogNormalSpectral.brown_resnick(sites, params["c"], params["kappa"])
        cov = _cov(mcfg, base)
        if cov is None:
            raise ConfigError("log-normal model needs a family with sites or a covariance matrix")
        return LogNormalSpectral(cov, sites)
    if "clusters" not in mcfg:
        raise ConfigError("clustered model needs clusters")
    return ClusteredArchimedean([
        ArchimedeanClusterSpec(tuple(c["members"]), c["copula"], c["theta"], c["margin"], c["alpha"])
        for c in mcfg["clusters"]])


def _cov(mcfg, base):
    if "cov" in mcfg:
        return np.asarray(mcfg["cov"], dtype=float)
    if "cov_csv" in mcfg:
        return read_matrix(resolve(base, mcfg["cov_csv"]))
    return None


def build_clustering(spec, m: int, sites: SiteSet | None) -> Partition:
    from .data import cluster_components
    if isinstance(spec, list):
        return Partition.of(spec, m)
    if sites is None:
        raise ConfigError("automatic clustering needs model sites")
    return cluster_components(sites, spec["max_block"], spec.get("seed", 0))
