"""Run configuration files.

Two equivalent formats are accepted:

* INI-style sections whose values are JSON literals::

      [prior]
      family = "matern32"
      sigma0 = 284.65
      shape = [10, 10, 5]

  A value that is not valid JSON is kept as a plain string.
* A JSON object of sections (files ending in ``.json`` or starting with ``{``).

Parsing then serializing then parsing again gives back the same mapping.
"""
from __future__ import annotations

import configparser
import copy
import json
from pathlib import Path

from .errors import ConfigError


def _literal(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_text(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not all(isinstance(v, dict) for v in data.values()):
            raise ConfigError("JSON config must map section names to objects")
        return data
    cp = configparser.ConfigParser(interpolation=None, default_section="\0")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return {sec: {k: _literal(v) for k, v in cp[sec].items()} for sec in cp.sections()}


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text)


def dumps(cfg: dict) -> str:
    lines = []
    for sec, values in cfg.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {json.dumps(v)}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)


def merge(defaults: dict, cfg: dict) -> dict:
    """Overlay ``cfg`` on ``defaults``; unknown sections or keys are rejected."""
    out = copy.deepcopy(defaults)
    for sec, values in cfg.items():
        if sec not in out:
            raise ConfigError(f"unknown section [{sec}]")
        for k, v in values.items():
            if k not in out[sec]:
                raise ConfigError(f"unknown key {k!r} in section [{sec}]")
            out[sec][k] = v
    return out


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def number(cfg: dict, sec: str, key: str, positive: bool = False, integer: bool = False,
           minimum=None):
    v = cfg[sec][key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v).is_integer()
    require(ok, f"[{sec}] {key} must be a{'n integer' if integer else ' number'}, got {v!r}")
    if positive:
        require(v > 0, f"[{sec}] {key} must be positive, got {v!r}")
    if minimum is not None:
        require(v >= minimum, f"[{sec}] {key} must be at least {minimum}, got {v!r}")
    return int(v) if integer else float(v)


FOURIER_DEFAULTS = {
    "grid": {"M": 50, "spacing": 1.0},
    "prior": {"family": "matern32", "sigma0": 1.0, "lambda0": 10.0, "m0": 0.0},
    "design": {"n_obs": [10, 50, 100], "noise_std": 0.01, "all_frequencies": False},
    "run": {"chunk_size": 2000, "plan_only": False},
}

# Matern 3/2 reference card of the volcano fit; noise 0.1 mGal.
CAMPAIGN_DEFAULTS = {
    "grid": {"shape": [10, 10, 5], "spacing": [100.0, 100.0, 50.0], "peak": 200.0, "standoff": 1.0},
    "prior": {"family": "matern32", "sigma0": 284.65, "lambda0": 651.6, "m0": 2139.1},
    "campaign": {
        "scenario": "synthetic-volcano",
        "n_steps": 30,
        "radius": 250.0,
        "noise_std": 0.1,
        "threshold": None,
        "threshold_quantile": 0.9,
        "strategy": "wivr",
        "weight_mode": "coverage",
        "design": None,
        "n_volume_samples": 200,
        "limit_batch": 10,
    },
    "run": {"chunk_size": 2000},
}

FIT_DEFAULTS = {
    "grid": {"shape": [12, 12], "spacing": [1.0, 1.0]},
    "prior": {"family": "matern32"},
    "truth": {"sigma0": 1.0, "lambda0": 3.0, "m0": 0.0},
    "data": {"n_obs": 60, "noise_std": 0.05},
    "fit": {"lambda_grid": [1.0, 2.0, 3.0, 4.0, 6.0], "sigma_init": 1.0, "budget": 500},
    "run": {"chunk_size": 2000},
}

SAMPLE_DEFAULTS = {
    "grid": {"shape": [20, 20], "spacing": [1.0, 1.0]},
    "prior": {"family": "matern52", "sigma0": 1.0, "lambda0": 4.0, "m0": 0.0},
    "sample": {"n": 100, "threshold": None},
    "data": {"indices": [], "noise_std": 0.0},
    "run": {"chunk_size": 2000},
}

DEFAULTS = {
    "fourier-demo": FOURIER_DEFAULTS,
    "grav-campaign": CAMPAIGN_DEFAULTS,
    "fit": FIT_DEFAULTS,
    "sample": SAMPLE_DEFAULTS,
}
