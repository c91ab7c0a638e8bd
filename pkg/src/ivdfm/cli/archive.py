"""Versioned JSON model archives with bit-exact parameter round trips."""
from __future__ import annotations

import json

import numpy as np

from ..vimodel import IVDFM, TrainConfig

FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


def model_to_dict(model):
    tensors = {}
    for name, p in model.named_parameters().items():
        # Python float repr is the shortest round-trip text, so values reload bit-exactly
        tensors[name] = {"shape": list(p.value.shape), "values": p.value.ravel().tolist()}
    return {
        "format_version": FORMAT_VERSION,
        "n_series": model.N,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "period": model.period,
        "initialised": model.initialised,
        "tensors": tensors,
    }


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def model_from_dict(blob):
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"archive format version {version!r} is not supported (expected {FORMAT_VERSION})")
    try:
        config = TrainConfig(**blob["config"])
    except (TypeError, ValueError) as exc:
        raise ArchiveError(f"archived config is invalid: {exc}") from None
    model = IVDFM(int(blob["n_series"]), config, rng=np.random.default_rng(0))
    model.period = blob["period"]
    model.initialised = bool(blob["initialised"])
    params = model.named_parameters()
    tensors = blob["tensors"]
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ArchiveError(f"tensor set mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        entry = tensors[name]
        shape = tuple(entry["shape"])
        if shape != p.value.shape:
            raise ArchiveError(f"tensor {name!r}: archived shape {shape} does not match model shape {p.value.shape}")
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != p.value.size:
            raise ArchiveError(f"tensor {name!r}: {values.size} values for shape {shape}")
        p.value[...] = values.reshape(shape)
    return model


def load_model(path):
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read model archive {path}: {exc}") from None
    return model_from_dict(blob)
