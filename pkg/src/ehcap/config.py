"""Flat ``key = value`` model files.

Lines starting with ``#`` or ``;`` are comments. Lists are comma separated,
matrices use ``;`` between rows. Recognized keys::

    scenario          EH-SC1 | EH-SC2 | FSC-X
    input_alphabet    0, 1
    output_alphabet   0, 1
    channel           bsc | matrix
    crossover         q                      (channel = bsc)
    dmc               0.9 0.1; 0.1 0.9       (channel = matrix)
    cost              0, 1
    battery_cap       1
    energy_rule       additive | store_first | lossy_store_first
    beta, eta         efficiencies           (lossy_store_first)
    harvest_alphabet  0, 1
    harvest_order     0
    harvest_probs     0.5, 0.5               (order 0)
    harvest_kernel    rows                   (order > 0)
    harvest_prehistory letters               (optional)
    initial_battery   b                      (optional)
    feasible_sets     0 | 0, 1 | 0, 1        (optional, one group per state)
    memory_m          1                      (surrogate state memory)
    memory_l          0                      (surrogate harvest memory)
"""
from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ADDITIVE, STORE_FIRST, EnergyRule, HarvestProcess, SystemModel, bsc

KNOWN = {
    "scenario", "input_alphabet", "output_alphabet", "channel", "crossover", "dmc",
    "cost", "battery_cap", "energy_rule", "beta", "eta", "harvest_alphabet",
    "harvest_order", "harvest_probs", "harvest_kernel", "harvest_prehistory",
    "initial_battery", "feasible_sets", "memory_m", "memory_l",
}


def read_config(path) -> dict:
    """Raw string values of a model file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def parse_config(text: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                   comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string("[model]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw = dict(cp["model"])
    unknown = set(raw) - KNOWN
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    return raw


def _ints(s: str) -> tuple:
    try:
        return tuple(int(t) for t in s.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected integers, got {s!r}") from None


def _floats(s: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in s.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"expected numbers, got {s!r}") from None


def _matrix(s: str) -> np.ndarray:
    rows = [_floats(r) for r in s.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix {s!r}")
    return np.vstack(rows)


def _get(raw, key, default=None):
    if key in raw:
        return raw[key]
    if default is None:
        raise ConfigError(f"missing key {key!r}")
    return default


def build_model(raw: dict) -> SystemModel:
    xs = _ints(_get(raw, "input_alphabet"))
    ys = _ints(_get(raw, "output_alphabet"))
    channel = _get(raw, "channel", "matrix")
    if channel == "bsc":
        q = float(_get(raw, "crossover"))
        if not 0 <= q <= 1:
            raise ConfigError("crossover must lie in [0, 1]")
        dmc = bsc(q)
    elif channel == "matrix":
        dmc = _matrix(_get(raw, "dmc"))
    else:
        raise ConfigError(f"unknown channel {channel!r}")
    rule_name = _get(raw, "energy_rule", "additive")
    if rule_name == "additive":
        rule = ADDITIVE
    elif rule_name == "store_first":
        rule = STORE_FIRST
    else:
        try:
            rule = EnergyRule(rule_name, float(_get(raw, "beta")), float(_get(raw, "eta")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    order = int(_get(raw, "harvest_order", "0"))
    alphabet = _ints(_get(raw, "harvest_alphabet"))
    if order == 0:
        kernel = _floats(_get(raw, "harvest_probs"))[None, :]
    else:
        kernel = _matrix(_get(raw, "harvest_kernel"))
    pre = _ints(raw["harvest_prehistory"]) if "harvest_prehistory" in raw else None
    harvest = HarvestProcess(alphabet, kernel, order, pre)
    fs = None
    if "feasible_sets" in raw:
        fs = tuple(_ints(g) for g in raw["feasible_sets"].split("|"))
    b1 = int(raw["initial_battery"]) if "initial_battery" in raw else None
    try:
        return SystemModel(xs, ys, dmc, _ints(_get(raw, "cost")),
                           int(_get(raw, "battery_cap")), rule, harvest,
                           scenario=_get(raw, "scenario", "EH-SC1"),
                           feasible_sets=fs, initial_battery=b1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_model(path) -> tuple:
    """Model plus its raw settings (the latter carries memory_m, memory_l)."""
    raw = read_config(path)
    return build_model(raw), raw


def fingerprint(raw: dict) -> str:
    """Short hash of the canonicalized settings."""
    canon = {k: " ".join(v.replace(",", " ").replace(";", " ; ").split())
             for k, v in raw.items()}
    blob = json.dumps(canon, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def model_fingerprint(model: SystemModel) -> str:
    """Hash of a model built in code, from its numeric content."""
    d = {
        "x": model.input_alphabet, "y": list(model.output_alphabet),
        "dmc": np.round(model.dmc, 15).tolist(), "cost": model.cost,
        "cap": model.battery_cap, "rule": [model.energy_rule.kind, model.energy_rule.beta,
                                           model.energy_rule.eta],
        "e": model.harvest.alphabet, "order": model.harvest.order,
        "kernel": np.round(model.harvest.kernel, 15).tolist(),
        "pre": model.harvest.prehistory, "scenario": model.scenario,
        "fs": model.feasible_sets, "b1": model.initial_battery,
    }
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
