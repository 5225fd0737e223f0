"""Run configuration: a nested YAML document with defaults for every key."""
from __future__ import annotations

import copy
import datetime as _dt

import yaml

from .paircopula import ALL_FAMILIES
from .riskeval import ConfigError
from .vlstm.training import TrainingConfig

DEFAULTS = {
    "data": {
        "prices": None,
        "returns": None,
        "alignment": "intersection",
        "max_fill": 5,
    },
    "split": {
        "train_start": None,
        "train_end": None,
        "valid_start": None,
        "valid_end": None,
    },
    "training": {
        "epochs": 500,
        "batch_size": 32,
        "learning_rate": 5e-4,
        "checkpoint_every": 10,
        "loss_threshold": None,
        "refresh_every": 10,
        "window": 30,
        "stride": 1,
        "hidden_size": 100,
        "latent_dim": 10,
        "feature_units": 10,
        "optimizer": "sgd",
        "clip_norm": 5.0,
    },
    "vine": {
        "truncation": 0.05,
        "weights": None,
        "families": [f.value for f in ALL_FAMILIES],
    },
    "var_levels": [0.90, 0.95, 0.99],
    "portfolio_weights": None,
    "arr_periods": 1.0,
    "direction_source": "p_up",
    "forecast_mode": "prior_mean",
    "ablation": "wpvc",
    "output_dir": "out",
    "seed": 0,
}


def _merge(base, over, path=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            _merge(base[k], v, path + k + ".")
        else:
            base[k] = v
    return base


def _date(x, key):
    if x is None or isinstance(x, _dt.date):
        return x
    try:
        return _dt.date.fromisoformat(str(x))
    except ValueError:
        raise ConfigError(f"{key}: not an ISO date: {x!r}") from None


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the YAML file at ``path``, then ``overrides`` (same nesting)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a mapping")
        _merge(cfg, doc)
    if overrides:
        _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg):
    for k in cfg["split"]:
        cfg["split"][k] = _date(cfg["split"][k], f"split.{k}")
    levels = cfg["var_levels"]
    if not levels or not all(isinstance(x, (int, float)) and 0 < x < 1 for x in levels):
        raise ConfigError("var_levels must be a nonempty list inside (0, 1)")
    if cfg["data"]["alignment"] not in ("intersection", "forward-fill"):
        raise ConfigError("data.alignment must be 'intersection' or 'forward-fill'")
    if cfg["direction_source"] not in ("p_up", "mu"):
        raise ConfigError("direction_source must be 'p_up' or 'mu'")
    if cfg["forecast_mode"] not in ("prior_mean", "sample"):
        raise ConfigError("forecast_mode must be 'prior_mean' or 'sample'")
    if not 0.0 <= float(cfg["vine"]["truncation"]) <= 1.0:
        raise ConfigError("vine.truncation must lie in [0, 1]")
    if not float(cfg["arr_periods"]) > 0:
        raise ConfigError("arr_periods must be positive")
    training_config(cfg)
    return cfg


def training_config(cfg) -> TrainingConfig:
    t = dict(cfg["training"])
    t.update(seed=int(cfg["seed"]), ablation=cfg["ablation"], truncation=float(cfg["vine"]["truncation"]),
             families=tuple(cfg["vine"]["families"]))
    try:
        return TrainingConfig(**t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training settings: {exc}") from None
