"""Experiment configuration: JSON in, fully resolved settings out.

A config names a method, the data (either view files or a synthetic
spec), and hyperparameters. Every omitted value falls back to the
standard training recipe (Adam 1e-4 with betas 0.9/0.999, batch 4096,
reduce-on-plateau patience 10 factor 0.5, 1000 steps with 200 warmup for
the meta loop, 200 steps per co-training iteration, 10% selection quota,
split seed 13). Validation happens before any compute and reports the
offending key path.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import ConfigError

METHODS = ("supervised", "cotrain", "mct", "sufficiency", "independence",
           "synth-gen")

DEFAULTS = {
    "method": None,
    "output_dir": None,
    "seeds": {"data": 13, "init": 13, "sample": 13},
    "data": {},
    "model": {"kind": "mlp", "hidden_width": 1024, "hidden_layers": 3},
    "optimizer": {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
    "schedule": {"patience": 10, "factor": 0.5, "ema_decay": 0.9},
    "mct": {"total_steps": 1000, "warmup_steps": 200, "batch_size": 4096,
            "supervised_weight": 1.0, "eval_every": 10,
            "labeled_grad_at": "updated", "optimizer": "adam"},
    "cotrain": {"steps_per_iteration": 200, "k_fraction": 0.1,
                "max_iterations": 10, "batch_size": 4096},
    "supervised": {"train_steps": 1000, "batch_size": 4096},
    "sufficiency": {"probe": "linear", "threshold": 75.0, "fraction": 0.1,
                    "train_steps": 1000, "batch_size": 4096},
    "independence": {"train_steps": 1000, "batch_size": 4096,
                     "hidden_width": 1024, "hidden_layers": 3,
                     "translator_lr": 0.1},
    "jobs": 1,
}

SYNTHETIC_DEFAULTS = {"classes": 10, "d1": 16, "d2": 16, "separation": 4.0,
                      "noise": 1.0, "n_labeled": 200, "n_unlabeled": 19800,
                      "n_test": 2000, "seed": 13}
SPLIT_DEFAULTS = {"fraction": 0.1, "seed": 13, "stratified": True}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in merged:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
        if isinstance(merged[key], dict) and key not in ("data",):
            merged[key] = _merge(merged[key], value,
                                 f"{path + '.' if path else ''}{key}")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path):
    """Parse and resolve a JSON config file.

    Raises ConfigError with a line-level message on malformed JSON and a
    key path on semantic problems. The MCT_SEED environment variable,
    when set, overrides every seed in the config.
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: "
            f"{e.msg}") from e
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from e
    return resolve_config(raw)


def resolve_config(raw):
    cfg = _merge(DEFAULTS, raw)
    validate_config(cfg)
    seed_env = os.environ.get("MCT_SEED")
    if seed_env is not None:
        try:
            seed = int(seed_env)
        except ValueError:
            raise ConfigError(f"MCT_SEED: not an integer: {seed_env!r}")
        cfg["seeds"] = {"data": seed, "init": seed, "sample": seed}
        if "synthetic" in cfg["data"]:
            cfg["data"]["synthetic"]["seed"] = seed
        if "views" in cfg["data"] and "split" in cfg["data"]["views"]:
            cfg["data"]["views"]["split"]["seed"] = seed
    return cfg


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg):
    _require(cfg["method"] in METHODS,
             f"method: expected one of {METHODS}, got {cfg['method']!r}")
    _require(isinstance(cfg["output_dir"], str) and cfg["output_dir"],
             "output_dir: required string")

    data = cfg["data"]
    has_synth = "synthetic" in data
    has_views = "views" in data
    _require(has_synth != has_views,
             "data: exactly one of 'synthetic' or 'views' is required")
    unknown = set(data) - {"synthetic", "views"}
    _require(not unknown, f"data: unknown keys {sorted(unknown)}")

    if has_synth:
        synth = _merge(SYNTHETIC_DEFAULTS, data["synthetic"], "data.synthetic")
        for key in ("classes", "d1", "d2", "n_labeled", "n_unlabeled", "n_test"):
            _require(int(synth[key]) > 0, f"data.synthetic.{key}: must be positive")
        _require(synth["separation"] > 0, "data.synthetic.separation: must be > 0")
        _require(synth["noise"] >= 0, "data.synthetic.noise: must be >= 0")
        data["synthetic"] = synth
    else:
        views = data["views"]
        _require(isinstance(views, dict), "data.views: expected an object")
        for v in ("view1", "view2"):
            _require(v in views, f"data.views.{v}: required")
            entry = views[v]
            presplit = {"labeled", "unlabeled", "test"} <= set(entry)
            trainsplit = {"train", "test"} <= set(entry)
            _require(presplit or trainsplit,
                     f"data.views.{v}: needs train+test or labeled+unlabeled+test paths")
        if any("train" in views[v] for v in ("view1", "view2")):
            views["split"] = _merge(SPLIT_DEFAULTS, views.get("split", {}),
                                    "data.views.split")
            _require(0 < views["split"]["fraction"] <= 1,
                     "data.views.split.fraction: must be in (0, 1]")

    _require(cfg["model"]["kind"] in ("linear", "mlp"),
             f"model.kind: expected linear or mlp, got {cfg['model']['kind']!r}")
    _require(cfg["model"]["hidden_width"] > 0, "model.hidden_width: must be positive")
    _require(1 <= cfg["model"]["hidden_layers"], "model.hidden_layers: must be >= 1")
    _require(cfg["optimizer"]["lr"] > 0, "optimizer.lr: must be positive")
    for b in ("beta1", "beta2"):
        _require(0 <= cfg["optimizer"][b] < 1, f"optimizer.{b}: must be in [0, 1)")
    _require(cfg["schedule"]["patience"] >= 1, "schedule.patience: must be >= 1")
    _require(0 < cfg["schedule"]["factor"] < 1, "schedule.factor: must be in (0, 1)")

    mct = cfg["mct"]
    _require(mct["total_steps"] > 0, "mct.total_steps: must be positive")
    _require(0 <= mct["warmup_steps"] <= mct["total_steps"],
             "mct.warmup_steps: must lie in [0, total_steps]")
    _require(mct["labeled_grad_at"] in ("updated", "original"),
             "mct.labeled_grad_at: expected 'updated' or 'original'")
    _require(mct["optimizer"] in ("adam", "sgd"),
             "mct.optimizer: expected 'adam' or 'sgd'")
    _require(mct["eval_every"] > 0, "mct.eval_every: must be positive")

    ct = cfg["cotrain"]
    _require(ct["steps_per_iteration"] > 0,
             "cotrain.steps_per_iteration: must be positive")
    _require(0 <= ct["k_fraction"] <= 1, "cotrain.k_fraction: must be in [0, 1]")
    _require(ct["max_iterations"] >= 0, "cotrain.max_iterations: must be >= 0")

    _require(cfg["sufficiency"]["probe"] in ("linear", "mlp"),
             "sufficiency.probe: expected linear or mlp")
    _require(0 < cfg["sufficiency"]["fraction"] <= 1,
             "sufficiency.fraction: must be in (0, 1]")
    _require(cfg["jobs"] >= 1, "jobs: must be >= 1")
    for name in ("supervised", "independence"):
        _require(cfg[name]["train_steps"] > 0,
                 f"{name}.train_steps: must be positive")
        _require(cfg[name]["batch_size"] > 0,
                 f"{name}.batch_size: must be positive")
    return cfg


def config_files(cfg):
    """All input file paths named by a resolved config."""
    paths = []
    views = cfg["data"].get("views")
    if views:
        for v in ("view1", "view2"):
            for key in ("train", "test", "labeled", "unlabeled"):
                if key in views[v]:
                    paths.append(views[v][key])
    return paths
