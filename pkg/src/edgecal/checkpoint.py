"""Versioned JSON checkpoints holding a config and named weight matrices."""
from __future__ import annotations

import json

import numpy as np

from .errors import DataError

MAGIC = "EDGECAL1"


def dump_weights(params: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(a) for a in np.asarray(v).ravel()]} for k, v in params.items()}


def load_weights(blob: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, w in blob.items():
        arr = np.asarray(w["data"], dtype=np.float64)
        shape = tuple(w["shape"])
        if arr.size != int(np.prod(shape)):
            raise DataError(f"weight {k!r}: {arr.size} values do not fill shape {shape}")
        out[k] = arr.reshape(shape)
    return out


def save(path, kind: str, config: dict, params: dict[str, np.ndarray], extra: dict | None = None) -> None:
    doc = {"magic": MAGIC, "kind": kind, "config": config, "weights": dump_weights(params)}
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Returns ``(config, weights, extra)``."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("magic") != MAGIC:
        raise DataError(f"{path}: missing {MAGIC} magic string")
    if kind is not None and doc.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind!r} checkpoint, found {doc.get('kind')!r}")
    return doc["config"], load_weights(doc["weights"]), doc.get("extra", {})
