"""Run configuration: a nested JSON document validated before any compute.

Unknown keys are errors. Every section is optional and falls back to the
defaults below.
"""

import copy
import hashlib
import json
import os
from dataclasses import fields

from .data import DEFAULT_FRACTIONS
from .errors import ConfigError, DropUQError
from .training import PAPER_ALPHAS, TrainConfig

DEFAULTS = {
    "task": "regression",
    "seed": 0,
    "data": {
        "source": "heteroscedastic",
        "n": 24000,
        "fractions": list(DEFAULT_FRACTIONS),
        "classes": 6,
        "separation": 3.0,
        "noise": 1.0,
        "path": None,
        "features": [],
        "targets": [],
    },
    "network": {
        "hidden": [64, 64],
        "activation": "relu",
        "hidden_retain": 0.5,
        "input_retain": 1.0,
        "variance_floor": 1e-6,
    },
    "loss": {"alpha": 0.5, "lambda_e": 0.0, "lambda_l": 0.0},
    "train": {
        "epochs": 100,
        "batch_size": 64,
        "optimizer": "adam",
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "early_stop_patience": 0,
        "shuffle": True,
        "clip_norm": 10.0,
    },
    "compare": {
        "rdeepsense_mc_k": [3, 5, 10, 20],
        "mcdrop_k": [3, 5, 10, 20],
        "ssp_k": [1, 3, 5, 10],
        "gp": True,
        "gp_max_train": 1000,
        "latency_samples": 20,
    },
    "sweep": {"alphas": list(PAPER_ALPHAS)},
    "bench": {"repetitions": 3, "warmup": 3, "samples": 50},
}

SOURCES = ("heteroscedastic", "blobs", "csv")


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _check_types(cfg, defaults, path=""):
    for key, default in defaults.items():
        value, where = cfg[key], f"{path}.{key}" if path else key
        if isinstance(default, dict):
            _check_types(value, default, where)
        elif isinstance(default, bool):
            _require(isinstance(value, bool), f"{where} must be true or false")
        elif isinstance(default, int):
            _require(isinstance(value, int) and not isinstance(value, bool), f"{where} must be an integer")
        elif isinstance(default, float):
            _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{where} must be a number")
        elif isinstance(default, list):
            _require(isinstance(value, list), f"{where} must be a list")
        elif isinstance(default, str):
            _require(isinstance(value, str), f"{where} must be a string")


def resolve(given, seed=None):
    """Merge a user document over the defaults and validate it."""
    cfg = _merge(DEFAULTS, given, "")
    if seed is not None:
        cfg["seed"] = seed
    _check_types(cfg, DEFAULTS)
    _require(cfg["task"] in ("regression", "classification"), "task must be 'regression' or 'classification'")
    d = cfg["data"]
    _require(d["source"] in SOURCES, f"data.source must be one of {SOURCES}")
    _require(d["source"] != "blobs" or cfg["task"] == "classification", "blobs data is a classification task")
    _require(d["source"] != "heteroscedastic" or cfg["task"] == "regression", "heteroscedastic data is a regression task")
    _require(d["n"] >= 3, "data.n must be at least 3")
    _require(len(d["fractions"]) == 3 and abs(sum(d["fractions"]) - 1.0) <= 1e-9
             and all(f >= 0 for f in d["fractions"]), "data.fractions must be three numbers summing to 1")
    if d["source"] == "csv":
        _require(isinstance(d["path"], str) and os.path.isfile(d["path"]), f"data.path {d['path']!r} does not exist")
        _require(d["features"] and d["targets"], "csv data needs features and targets")
    n = cfg["network"]
    _require(all(isinstance(h, int) and h >= 1 for h in n["hidden"]), "network.hidden must be positive integers")
    _require(n["activation"] in ("relu", "softplus", "identity"), "network.activation must be relu, softplus or identity")
    for key in ("hidden_retain", "input_retain"):
        _require(0.0 < n[key] <= 1.0, f"network.{key} must lie in (0, 1]")
    _require(n["variance_floor"] >= 0.0, "network.variance_floor must be non-negative")
    loss = cfg["loss"]
    _require(0.0 <= loss["alpha"] <= 1.0, "loss.alpha must lie in [0, 1]")
    _require(loss["lambda_e"] >= 0.0 and loss["lambda_l"] >= 0.0, "loss lambdas must be non-negative")
    try:
        train_config(cfg)
    except DropUQError as exc:
        raise ConfigError(f"train: {exc}") from None
    c = cfg["compare"]
    _require(all(isinstance(k, int) and k >= 2 for k in c["rdeepsense_mc_k"] + c["mcdrop_k"]),
             "Monte-Carlo k values must be integers >= 2")
    _require(all(isinstance(k, int) and k >= 1 for k in c["ssp_k"]), "compare.ssp_k values must be integers >= 1")
    _require(c["gp_max_train"] >= 1 and c["latency_samples"] >= 1, "compare sizes must be positive")
    _require(cfg["sweep"]["alphas"] and all(0.0 <= a <= 1.0 for a in cfg["sweep"]["alphas"]),
             "sweep.alphas must be a non-empty list inside [0, 1]")
    b = cfg["bench"]
    _require(b["repetitions"] >= 1 and b["warmup"] >= 0 and b["samples"] >= 1,
             "bench.repetitions and bench.samples must be positive")
    return cfg


def load(path, seed=None):
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    return resolve(doc, seed)


def train_config(cfg):
    t = dict(cfg["train"])
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(seed=cfg["seed"], **{k: v for k, v in t.items() if k in names})


def digest(cfg):
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
