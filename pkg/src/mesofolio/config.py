"""Run configuration: defaults, file loading and flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

SEED_ENV = "MESOFOLIO_SEED"

# Every key a config file may set, with its default.
DEFAULT_CONFIG = {
    "input": {
        "path": None,  # price CSV; required by every command except synth
        "layout": "wide",  # wide: date,<ticker>...; long: date,ticker,close
        "missing_threshold": 0.01,  # drop assets missing more than this fraction
        "returns": "log",  # log or simple
        "sector_path": None,  # optional CSV with columns asset,sector
    },
    "window": None,  # optional {t0, delta}: filter/communities/optimize use [t0 - delta, t0)
    "synthetic": {
        "n_assets": 100,
        "n_obs": 1000,
        "blocks": [[25, 0.4], [25, 0.4], [25, 0.4], [25, 0.4]],
        "market_loading": 0.5,
        "noise_sd": 1.0,
        "volatility": None,  # [low, high]: per-asset scale drawn uniformly
        "regimes": None,  # {lengths: [...], levels: [...]} for fixed blocks + switching market
    },
    "filter": {"sign_threshold": 0.95},
    "communities": {"restarts": 20},
    "strategies": [
        {"name": "equal"},
        {"name": "markowitz"},
        {"name": "rmt"},
        {"name": "mesoscopic"},
        {"name": "community"},
    ],
    "backtest": {
        "windows": None,  # list of {t0, delta}; default: one split at the panel midpoint
        "sizes": None,  # subsample sizes; default: all assets
        "draws": 1,
        "predict_with": "empirical",  # or strategy
        "frontier": None,  # {n_targets: 30, mode: grid|quantile}
    },
    "solver": {"kkt_tol": 1e-8},
    "seed": 0,
    "workers": 1,
    "output": {"dir": "out", "format": "both"},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if k not in out:
            raise KeyError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then ``MESOFOLIO_SEED``, then flag overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _merge(cfg, yaml.safe_load(fh) or {})
        base = Path(path).parent
        for key in ("path", "sector_path"):
            p = cfg["input"][key]
            if p is not None and not Path(p).is_absolute():
                cfg["input"][key] = str(base / p)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    if cfg["output"]["format"] not in ("json", "csv", "both"):
        raise ValueError(f"output.format must be json, csv or both, got {cfg['output']['format']!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
