"""Strict YAML run configuration.

Each command has a schema of allowed keys and defaults. Unknown keys,
wrong types and missing sections are reported with the YAML line number.
"""
from __future__ import annotations

import copy
import hashlib
from pathlib import Path

import yaml

from .core import ConfigError

_NUM = (int, float)

NETWORK = {
    "model": ("AF", str),
    "N": (1000, int),
    "T": (20, int),
    "theta": (0.0, _NUM),
    "sigma": (0.1, _NUM),
    "gain": (1.0, _NUM),
    "leak": (0.5, _NUM),
    "reset": (-1.0, _NUM),
    "weights": ({
        "kind": ("gaussian", str),
        "mean": (0.0, _NUM),
        "var": (4.0, _NUM),
        "value": (0.0, _NUM),
        "count": (0, int),
        "exclude_diagonal": (True, bool),
    }, dict),
    "init": ({"mean": (0.0, _NUM), "std": (1.0, _NUM)}, dict),
    "realizations": (10, int),
    "seed": (0, int),
}

IF_PARAMS = {
    "tau": (20.0, _NUM),
    "theta": (20.0, _NUM),
    "reset": (10.0, _NUM),
    "J": (0.1, _NUM),
    "C": (1000, int),
    "D": (2.0, _NUM),
    "mu_ext": (25.0, _NUM),
    "sigma_ext": (1.0, _NUM),
}

SCHEMAS = {
    "simulate": {**NETWORK, "dump_trajectories": (False, bool)},
    "compare": {**NETWORK, "tolerance": (0.05, _NUM)},
    "meanfield": {
        "Jbar": (0.0, _NUM),
        "J2": (4.0, _NUM),
        "theta": (0.0, _NUM),
        "sigma": (0.1, _NUM),
        "gain": (1.0, _NUM),
        "T": (20, int),
        "transfer": ("logistic", str),
        "init": ({"mean": (0.0, _NUM), "std": (1.0, _NUM)}, dict),
        "twin": ({"delta": (0.0, _NUM), "shared_noise": (False, bool)}, dict),
        "seed": (0, int),
    },
    "chaos-surface": {
        "J2": ({"start": (0.25, _NUM), "stop": (16.0, _NUM), "num": (10, int)}, dict),
        "theta": ({"start": (0.0, _NUM), "stop": (2.0, _NUM), "num": (10, int)}, dict),
        "gain": (1.0, _NUM),
        "seed": (0, int),
    },
    "twopop-map": {
        "g": ({"start": (1.0, _NUM), "stop": (10.0, _NUM), "num": (15, int)}, dict),
        "d": ({"start": (0.0, _NUM), "stop": (3.0, _NUM), "num": (10, int)}, dict),
        "T": (300, int),
        "sigma": (0.0, _NUM),
        "delta": (1e-3, _NUM),
        "seed": (0, int),
    },
    "fp-rate": {
        **IF_PARAMS,
        "external": ({"J": (0.0, _NUM), "C": (0, int), "nu": (0.0, _NUM)}, (dict, type(None))),
        "grid_points": (4000, int),
        "seed": (0, int),
    },
    "fp-evolve": {
        **IF_PARAMS,
        "duration": (1000.0, _NUM),
        "cells": (300, int),
        "dt": (0.02, _NUM),
        "scan": ({"mu_ext": ([], list), "sigma_ext": ([], list)}, (dict, type(None))),
        "seed": (0, int),
    },
    "spiking": {
        **IF_PARAMS,
        "N": (10000, int),
        "duration": (2000.0, _NUM),
        "dt": (0.1, _NUM),
        "seed": (0, int),
    },
    "girsanov-verify": {
        "N": (5, int),
        "T": (3, int),
        "replicas": (10000, int),
        "Jbar": (0.3, _NUM),
        "J2": (0.3, _NUM),
        "theta": (0.0, _NUM),
        "sigma": (1.0, _NUM),
        "gain": (1.0, _NUM),
        "init": ({"mean": (0.0, _NUM), "std": (1.0, _NUM)}, dict),
        "seed": (0, int),
    },
}


def _where(node):
    return f"line {node.start_mark.line + 1}"


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def _check(schema, node, path):
    if node is None:
        node = yaml.MappingNode("tag:yaml.org,2002:map", [])
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{'.'.join(path) or 'config'} ({_where(node)}): expected a mapping")
    out = {}
    seen = {}
    for knode, vnode in node.value:
        key = knode.value
        dotted = ".".join(path + [key])
        if key in seen:
            raise ConfigError(f"duplicate key '{dotted}' at {_where(knode)} (first at line {seen[key]})")
        seen[key] = knode.start_mark.line + 1
        if key not in schema:
            allowed = ", ".join(sorted(schema))
            raise ConfigError(f"unknown key '{dotted}' at {_where(knode)}; allowed: {allowed}")
        default, kind = schema[key]
        if isinstance(default, dict):
            if isinstance(vnode, yaml.ScalarNode) and _scalar(vnode) is None:
                optional = isinstance(kind, tuple) and type(None) in kind
                out[key] = None if optional else _check(default, None, path + [key])
                continue
            out[key] = _check(default, vnode, path + [key])
            continue
        value = _scalar(vnode)
        if kind is _NUM:
            ok = isinstance(value, _NUM) and not isinstance(value, bool)
        elif kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            raise ConfigError(f"key '{dotted}' at {_where(vnode)}: expected {getattr(kind, '__name__', 'number')}, "
                              f"got {type(value).__name__}")
        out[key] = float(value) if kind is _NUM else value
    for key, (default, kind) in schema.items():
        if key in out:
            continue
        if isinstance(default, dict):
            optional = isinstance(kind, tuple) and type(None) in kind
            out[key] = None if optional else _check(default, None, path + [key])
        else:
            out[key] = copy.deepcopy(default)
    return out


def parse_config(text, command):
    """Validated config dict for ``command`` from YAML text (empty text gives all defaults)."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command '{command}'")
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return _check(SCHEMAS[command], node, [])


def load_config(path, command):
    """Return (config, sha256 of the file bytes); ``path=None`` gives the defaults."""
    if path is None:
        return parse_config("", command), hashlib.sha256(b"").hexdigest()
    raw = Path(path).read_bytes()
    return parse_config(raw.decode("utf-8"), command), hashlib.sha256(raw).hexdigest()
