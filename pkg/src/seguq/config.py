"""Run configuration: one JSON document with data/arch/train/laplace/eval
blocks, deep-merged over the built-in defaults."""

from __future__ import annotations

import copy
import json

from .errors import ConfigError
from .synth import CORRUPTION_KINDS

KNOWN_MODELS = ("lsn", "lsn_diag", "ssn_ensemble", "unet_laplace")

DEFAULT_CONFIG = {
    "seed": 1234,
    "data": {
        "n": 200,
        "image_size": 32,
        "split": [0.7, 0.1, 0.2],
        "noise_sigma": 0.02,
    },
    "arch": {
        "channels": [4, 8, 16],
        "rank": 5,
        "in_channels": 1,
    },
    "train": {
        "epochs": 60,
        "batch_size": 10,
        "learning_rate": 0.001,
        "logit_samples": 20,
    },
    "laplace": {
        # trained nets are near-saturated, so most curvature entries are
        # tiny; the prior precision has to carry otherwise-unconstrained
        # weights or posterior samples destroy the network
        "prior_precision": 2500.0,
        "posterior_samples": 50,
        "logit_samples": 20,
    },
    "eval": {
        "ood": {"noise": 0.3, "blur": 2.0, "spike": 0.5, "ghosting": 0.6},
        "patch": 10,
        "heatmaps": 2,
        "ensemble_size": 5,
        "models": ["lsn", "lsn_diag", "ssn_ensemble", "unet_laplace"],
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(cfg):
    for kind in cfg["eval"]["ood"]:
        if kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {kind!r}")
    for model in cfg["eval"]["models"]:
        if model not in KNOWN_MODELS:
            raise ConfigError(f"unknown model combination {model!r}")
    if cfg["data"]["n"] < 10:
        raise ConfigError("data.n must be at least 10")
    if cfg["laplace"]["prior_precision"] <= 0:
        raise ConfigError("laplace.prior_precision must be > 0")
    if abs(sum(cfg["data"]["split"]) - 1.0) > 1e-9:
        raise ConfigError("data.split fractions must sum to 1")
    return cfg


def load_config(path=None, seed=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    if seed is not None:
        cfg["seed"] = int(seed)
    return validate(cfg)
