"""Run configuration: one TOML file, overridable key by key.

Precedence is command-line flags > config file > defaults. Overrides use dotted
keys (``--set tfidf.ngram_max=3``); values are parsed as TOML literals when
possible and kept as strings otherwise.
"""
from __future__ import annotations

import copy
import sys
from pathlib import Path

from .errors import UsageError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS = {
    "seed": 0,
    "output_dir": "run",
    "dataset": {
        "path": "",
        "format": "",
        "class0_name": "class0",
        "class1_name": "class1",
        "label_map": {},
        "downsample_ratio": 0,
    },
    # used when dataset.path is empty
    "synthetic_dataset": {
        "n": 10000,
        "prevalence": 0.02,
        "signal_token": "sigmarker",
        "signal_rate_pos": 0.6,
        "signal_rate_neg": 0.1,
    },
    "split": {"train_fraction": 0.8},
    "oracle": {
        "mode": "synthetic",
        "endpoint_url": "",
        "model_name": "",
        "timeout": 120.0,
        "max_retries": 3,
        "temperature": 0.0,
        "max_in_flight": 4,
        "backoff_base": 1.0,
        "synthetic": {
            "signal_token": "sigmarker",
            "acc_with_signal": 0.7,
            "acc_without_signal": 0.7,
            "n_cues": 3,
            "cue_fidelity": 0.85,
        },
    },
    "prompt": {"task_statement": "", "instruction_block": "", "not_sure_name": "not sure"},
    "tfidf": {"ngram_min": 1, "ngram_max": 4, "min_df": 1, "max_features": 0, "lowercase": True},
    "train": {"l2": 0.0, "tol": 1e-6, "max_iter": 1000},
    "thresholds": {
        "grid": [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
        "report": [0.5, 0.7],
    },
    "costs": {"preset": "ihca", "ce": 0.0, "ci": 0.0, "e": 0.7, "ep": -1.0},
    "temporal": {"timelines": "", "horizon_hours": 6.0, "bins": 30},
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in out:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(out[k], dict) and k != "label_map":
            if not isinstance(v, dict):
                raise UsageError(f"config key {key!r} must be a table")
            out[k] = _merge(out[k], v, key + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise UsageError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise UsageError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw.strip())


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file {p} does not exist")
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{p}: {exc}") from None
        cfg = _merge(cfg, data)
    for a in overrides:
        apply_override(cfg, a)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    mode = cfg["oracle"]["mode"]
    if mode not in ("synthetic", "endpoint"):
        raise UsageError(f"oracle.mode must be 'synthetic' or 'endpoint', got {mode!r}")
    if mode == "endpoint" and not (cfg["oracle"]["endpoint_url"] and cfg["oracle"]["model_name"]):
        raise UsageError("endpoint mode needs oracle.endpoint_url and oracle.model_name")
    path = cfg["dataset"]["path"]
    if path and not Path(path).exists():
        raise UsageError(f"dataset.path {path!r} does not exist")
    tl = cfg["temporal"]["timelines"]
    if tl and not Path(tl).exists():
        raise UsageError(f"temporal.timelines {tl!r} does not exist")
