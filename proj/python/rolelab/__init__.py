"""Python front end for the rolelab C++ core."""

import json as _json
import os as _os

from . import _core
from ._core import (
    ConfigError,
    Error,
    entropy_collapse_depth,
    group_advantages,
    ngram_jaccard,
    parse_boxed,
    peak_over_first,
    perplexity,
    token_chi2,
)

__all__ = [
    "ConfigError",
    "Error",
    "default_config",
    "emit_report",
    "entropy_collapse_depth",
    "group_advantages",
    "mechanism_a",
    "mechanism_b",
    "ngram_jaccard",
    "normalize_config",
    "parse_boxed",
    "peak_over_first",
    "perplexity",
    "run_grid",
    "sa_baseline",
    "signatures",
    "token_chi2",
    "train",
]


def _dumps(cfg):
    return cfg if isinstance(cfg, str) else _json.dumps(cfg or {})


def default_config(preset=""):
    return _json.loads(_core.default_config(preset))


def normalize_config(cfg):
    """Fill in defaults; raises ConfigError on unknown keys."""
    return _json.loads(_core.normalize_config(_dumps(cfg)))


def train(cfg, out_dir=""):
    return _json.loads(_core.train(_dumps(cfg), _os.fspath(out_dir)))


def sa_baseline(cfg, out_dir=""):
    return _json.loads(_core.sa_baseline(_dumps(cfg), _os.fspath(out_dir)))


def run_grid(cfg, out_dir):
    return _json.loads(_core.run_grid(_dumps(cfg), _os.fspath(out_dir)))


def mechanism_a(cfg=None, out_dir=""):
    return _json.loads(_core.mechanism_a(_dumps(cfg), _os.fspath(out_dir)))


def mechanism_b(cfg=None, out_dir=""):
    return _json.loads(_core.mechanism_b(_dumps(cfg), _os.fspath(out_dir)))


def signatures(log_path):
    return _json.loads(_core.signatures(_os.fspath(log_path)))


def emit_report(run_dir, out_dir):
    return _json.loads(_core.emit_report(_os.fspath(run_dir), _os.fspath(out_dir)))
