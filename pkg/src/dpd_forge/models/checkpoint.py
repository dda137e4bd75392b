"""JSON checkpoints; floats are written with 17 significant digits so f64 round-trips exactly."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .base import SequenceModel
from .gmp import GmpModel
from .recurrent import DgruModel, GruModel, LstmModel

FORMAT_VERSION = 1

REGISTRY: dict[str, type[SequenceModel]] = {
    "gru": GruModel,
    "lstm": LstmModel,
    "dgru": DgruModel,
    "gmp": GmpModel,
}


class CheckpointError(Exception):
    pass


def build_model(family: str, hyperparams: dict, seed: int = 0) -> SequenceModel:
    try:
        cls = REGISTRY[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}") from None
    return cls(hyperparams, seed)


def count_params(model: SequenceModel) -> int:
    return model.count_params()


def _fmt(v: float) -> str:
    s = format(float(v), ".17g")
    if not np.isfinite(v):
        raise ValueError("cannot serialise non-finite parameter")
    return s


def dumps_checkpoint(model: SequenceModel, extra: dict | None = None) -> str:
    names = model.params.names()
    head = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "hyperparams": model.hyperparams,
        "seed": model.seed,
        "parameter_order": names,
    }
    if extra:
        head.update(extra)
    arrays = ",\n    ".join(
        "[" + ",".join(_fmt(v) for v in model.params[k].value.ravel()) + "]" for k in names)
    body = json.dumps(head, indent=2, sort_keys=True)
    # splice the parameter block in by hand to control float formatting
    return body[:-2] + ',\n  "parameters": [\n    ' + arrays + "\n  ]\n}\n"


def save_checkpoint(model: SequenceModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_checkpoint(model, extra))


def loads_checkpoint(text: str) -> tuple[SequenceModel, dict]:
    try:
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format_version {doc.get('format_version')!r}")
        model = build_model(doc["family"], doc["hyperparams"], doc.get("seed", 0))
        order = doc["parameter_order"]
        if order != model.params.names():
            raise CheckpointError("parameter_order does not match the model layout")
        values = {}
        for name, flat in zip(order, doc["parameters"]):
            shape = model.params[name].value.shape
            arr = np.array(flat, dtype=np.float64)
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"{name}: expected {np.prod(shape)} values, got {arr.size}")
            values[name] = arr.reshape(shape)
        if len(values) != len(order):
            raise CheckpointError("parameter list length does not match parameter_order")
        model.params.load(values)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return model, doc


def load_checkpoint(path) -> tuple[SequenceModel, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads_checkpoint(text)
