import json

import pytest
import torch

from paradiff.checkpoint import load_manifest, load_params, params_hash, save_checkpoint
from paradiff.errors import ValidationError


def _state():
    gen = torch.Generator().manual_seed(0)
    return {
        "b.weight": torch.randn(3, 4, generator=gen),
        "a.bias": torch.randn(5, generator=gen),
        "scalar": torch.tensor(2.5),
    }


def test_roundtrip_exact(tmp_path):
    state = _state()
    save_checkpoint(tmp_path / "ck", state, {"kind": "test", "note": 1})
    manifest = load_manifest(tmp_path / "ck")
    assert manifest["kind"] == "test"
    assert manifest["params_sha256"] == params_hash(state)
    loaded = load_params(tmp_path / "ck")
    assert set(loaded) == set(state)
    for name in state:
        assert torch.equal(loaded[name], state[name])
        assert loaded[name].dtype == torch.float32


def test_params_are_name_sorted_little_endian(tmp_path):
    state = _state()
    save_checkpoint(tmp_path / "ck", state, {})
    raw = (tmp_path / "ck" / "params.bin").read_bytes()
    manifest = load_manifest(tmp_path / "ck")
    names = [e["name"] for e in manifest["params"]]
    assert names == sorted(names)
    import numpy as np

    first = state["a.bias"].numpy().astype("<f4").tobytes()
    assert raw[: len(first)] == first
    assert len(raw) == 4 * sum(t.numel() for t in state.values())


def test_hash_sensitive_to_values_and_names():
    state = _state()
    h = params_hash(state)
    bumped = dict(state)
    bumped["a.bias"] = state["a.bias"] + 1e-6
    assert params_hash(bumped) != h
    renamed = {("x" + k): v for k, v in state.items()}
    assert params_hash(renamed) != h
    assert params_hash(dict(state)) == h  # order-independent


def test_missing_manifest(tmp_path):
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "nothing")


def test_truncated_params_detected(tmp_path):
    state = _state()
    save_checkpoint(tmp_path / "ck", state, {})
    raw = (tmp_path / "ck" / "params.bin").read_bytes()
    (tmp_path / "ck" / "params.bin").write_bytes(raw[:-8])
    with pytest.raises(ValidationError):
        load_params(tmp_path / "ck")


def test_manifest_json_readable(tmp_path):
    save_checkpoint(tmp_path / "ck", _state(), {"config": {"d": 8}})
    data = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert data["config"] == {"d": 8}
    assert all({"name", "shape", "offset"} <= set(e) for e in data["params"])
