"""Versioned JSON checkpoints holding raw float64 weights, bit-exact on reload."""
from __future__ import annotations

import base64
import json
from dataclasses import asdict

import numpy as np
import torch

from .model import ConCat, ModelConfig
from .solvers import SolverSpec

FORMAT = "concat-checkpoint"
VERSION = 1


class CheckpointError(Exception):
    pass


def _encode(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().numpy().astype("<f8", copy=False)
    return {"shape": list(arr.shape), "dtype": "<f8",
            "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii")}


def _decode(d: dict) -> torch.Tensor:
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype=d["dtype"]).reshape(d["shape"])
    return torch.from_numpy(arr.astype(np.float64))


def save_checkpoint(path, model: ConCat, spec: SolverSpec, seed: int, extra: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model": asdict(model.cfg),
        "solver": asdict(spec),
        "seed": seed,
        "extra": extra or {},
        "weights": {k: _encode(v) for k, v in model.state_dict().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return ``(model, solver spec, seed, extra)``.

    If ``expect`` is given its widths must match the stored ones.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = ModelConfig(**doc["model"])
    if expect is not None and expect.widths() != cfg.widths():
        raise CheckpointError(f"width mismatch: config {expect.widths()} vs checkpoint {cfg.widths()}")
    model = ConCat(cfg)
    state = {k: _decode(v) for k, v in doc["weights"].items()}
    model.load_state_dict(state)
    model.eval()
    return model, SolverSpec(**doc["solver"]), doc["seed"], doc.get("extra", {})
