"""Checkpoint directories: manifest.json + flat little-endian float32 params.

Layout::

    <ckpt>/
      manifest.json   # config, vocab, norm stats, schedule spec, param index
      params.bin      # all parameter tensors, concatenated, little-endian f32

The manifest's ``params`` list maps each tensor name to its shape and offset
(in elements) inside params.bin. Manifests also carry a content hash of the
parameter bytes so downstream runs can verify that frozen components were not
touched.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError

__all__ = ["save_checkpoint", "load_manifest", "load_params", "params_hash"]


def params_hash(state_dict: dict[str, torch.Tensor]) -> str:
    """SHA-256 over the little-endian float32 bytes of all params, name-sorted."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        arr = state_dict[name].detach().cpu().numpy().astype("<f4")
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path, state_dict: dict[str, torch.Tensor], manifest: dict
) -> None:
    """Write params.bin plus a manifest carrying the given metadata."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with (path / "params.bin").open("wb") as fh:
        for name in sorted(state_dict):
            arr = state_dict[name].detach().cpu().numpy().astype("<f4")
            fh.write(arr.tobytes())
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    manifest = dict(manifest)
    manifest["params"] = index
    manifest["params_sha256"] = params_hash(state_dict)
    with (path / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2)


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise ValidationError(f"no manifest.json under {path}")
    with mf.open() as fh:
        return json.load(fh)


def load_params(path: str | Path, manifest: dict | None = None) -> dict[str, torch.Tensor]:
    """Read params.bin back into a name -> float32 tensor mapping."""
    path = Path(path)
    if manifest is None:
        manifest = load_manifest(path)
    raw = np.fromfile(path / "params.bin", dtype="<f4")
    out = {}
    for entry in manifest["params"]:
        numel = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = raw[entry["offset"] : entry["offset"] + numel]
        if chunk.size != numel:
            raise ValidationError(f"params.bin truncated at {entry['name']}")
        out[entry["name"]] = torch.from_numpy(
            chunk.reshape(entry["shape"]).copy()
        )
    return out
