"""Multimodal federated prototype learning simulator."""

import json

from ._core import (
    ProtofedError,
    assign_missing_modalities,
    auc_binary,
    config_keys,
    dirichlet_partition,
    macro_f1,
    uar,
)
from . import _core


def _text(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def _str_overrides(overrides):
    return {k: v if isinstance(v, str) else json.dumps(v) for k, v in overrides.items()}


def resolve_config(config=None, **overrides):
    """Full validated config as a dict."""
    return json.loads(_core.resolve_config(_text(config), _str_overrides(overrides)))


def run(config=None, **overrides):
    """Run every configured seed. Returns the parsed summary.json."""
    out = _core.run(_text(config), _str_overrides(overrides))
    with open(f"{out}/summary.json") as f:
        return json.load(f)


def gen_data(out_dir, config=None, **overrides):
    return _core.gen_data(json.dumps(resolve_config(config, **overrides)), out_dir)


def sweep(axis, values=(), config=None, **overrides):
    return _core.sweep(json.dumps(resolve_config(config, **overrides)), axis, [str(v) for v in values])


def payload_sizes(config=None, **overrides):
    return _core.payload_sizes(json.dumps(resolve_config(config, **overrides)))


__all__ = [
    "ProtofedError",
    "assign_missing_modalities",
    "auc_binary",
    "config_keys",
    "dirichlet_partition",
    "gen_data",
    "macro_f1",
    "payload_sizes",
    "resolve_config",
    "run",
    "sweep",
    "uar",
]
