"""Checkpoint container.

A checkpoint is a NumPy ``.npz`` archive. The entry ``__meta__`` holds a JSON
document ``{"format": "locfewshot-ckpt", "version": 1, "modules": {name: config},
"extra": {...}}``; every tensor of module ``name`` is stored as
``"<name>/<state_dict key>"`` in float32 (or its native dtype for buffers).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .encoder import build_encoder

FORMAT = "locfewshot-ckpt"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, modules: dict, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": FORMAT, "version": VERSION, "modules": {}, "extra": extra or {}}
    arrays = {}
    for name, module in modules.items():
        meta["modules"][name] = module.config()
        for key, value in module.state_dict().items():
            arrays[f"{name}/{key}"] = value.detach().cpu().numpy()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} has no metadata entry")
        meta = json.loads(data["__meta__"].tobytes().decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def load_checkpoint(path) -> tuple[dict, dict]:
    """Rebuild every module stored in ``path``; returns ``(modules, extra)``."""
    meta, arrays = read_checkpoint(path)
    modules = {}
    for name, config in meta["modules"].items():
        module = build_encoder(config)
        prefix = f"{name}/"
        state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix)}
        module.load_state_dict(state)
        module.eval()
        modules[name] = module
    return modules, meta["extra"]
