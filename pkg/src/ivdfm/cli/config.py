"""Experiment configuration: YAML in, schema-validated nested dict out."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json

import jsonschema
import yaml

from ..vimodel import TrainConfig

KINDS = ("recovery", "intervention", "forecast", "degeneracy-demo", "gradcheck")


class ConfigError(ValueError):
    pass


_TRAIN_TYPES = {int: {"type": "integer"}, float: {"type": "number"}, bool: {"type": "boolean"},
                str: {"type": "string"}}


def _train_schema():
    props = {}
    for f in dataclasses.fields(TrainConfig):
        default = f.default
        if f.name in ("n_lags", "period"):
            kind = "integer" if f.name == "n_lags" else "number"
            props[f.name] = {"type": [kind, "null"]}
        else:
            props[f.name] = dict(_TRAIN_TYPES[type(default)])
    return {"type": "object", "properties": props, "additionalProperties": False}


def _obj(**props):
    return {"type": "object", "properties": props, "additionalProperties": False}


_INT = {"type": "integer"}
_NUM = {"type": "number"}
_BOOL = {"type": "boolean"}
_INTS = {"type": "array", "items": _INT}

SCHEMA = _obj(
    kind={"enum": list(KINDS)},
    seeds=_INTS,
    out={"type": "string"},
    figures=_BOOL,
    train=_train_schema(),
    recovery=_obj(dgp={"enum": ["static", "dynamic"]}, T=_INT, N=_INT, r=_INT, p=_INT,
                  standardize=_BOOL, constant_context=_BOOL),
    intervention=_obj(variants={"type": "array", "items": {"enum": ["base", "regime", "chain"]}},
                      T=_INT, r=_INT, N=_INT, T_grid=_INTS, r_grid=_INTS, k=_INT, c=_NUM, H=_INT,
                      t0={"type": ["integer", "null"]}, shock_scale=_NUM, oracle=_BOOL),
    forecast=_obj(dataset={"type": ["string", "null"]}, has_header=_BOOL,
                  timestamp_col={"type": ["integer", "string", "null"]},
                  horizons=_INTS, window=_INT, stride=_INT, max_origins=_INT, n_paths=_INT,
                  synthetic=_obj(T=_INT, N=_INT, r=_INT, p=_INT, seed=_INT)),
    degeneracy=_obj(n_rotations=_INT, r=_INT, T=_INT),
    gradcheck=_obj(n_configs=_INT, eps=_NUM),
)
SCHEMA["required"] = ["kind"]

DEFAULTS = {
    "seeds": list(range(10)),
    "out": "runs",
    "figures": True,
    "train": {},
    "recovery": {"dgp": "dynamic", "T": 200, "N": 20, "r": 5, "p": 1, "standardize": True,
                 "constant_context": False},
    "intervention": {"variants": ["base", "regime", "chain"], "T": 200, "r": 3, "N": 10,
                     "T_grid": [100, 200, 500, 1000], "r_grid": [2, 3, 4, 5], "k": 0, "c": 2.0,
                     "H": 10, "t0": None, "shock_scale": 1.0, "oracle": False},
    "forecast": {"dataset": None, "has_header": True, "timestamp_col": None, "horizons": [96],
                 "window": 96, "stride": 25, "max_origins": 10, "n_paths": 200,
                 "synthetic": {"T": 1500, "N": 8, "r": 2, "p": 1, "seed": 0}},
    "degeneracy": {"n_rotations": 20, "r": 2, "T": 20},
    "gradcheck": {"n_configs": 20, "eps": 1e-5},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(raw):
    """Validate a raw mapping and fill defaults. Unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from None
    if len(set(cfg["seeds"])) != len(cfg["seeds"]):
        raise ConfigError("seeds must be distinct")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    return validate(raw or {})


def config_hash(cfg):
    """Short digest of everything that affects results (the output path does not)."""
    blob = json.dumps({k: v for k, v in cfg.items() if k != "out"}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_config(cfg, **overrides):
    return TrainConfig(**{**cfg["train"], **overrides})
