import json

import numpy as np
import pytest

from deblurlab import CheckpointError, ParamStore, config_hash
from deblurlab.params import FORMAT_VERSION, MAGIC


@pytest.fixture
def store():
    rng = np.random.default_rng(0)
    tensors = {
        "layer1.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "layer1.bias": np.zeros(4, dtype=np.float32),
        "deep/slot": rng.standard_normal((2, 2)).astype(np.float64),
    }
    return ParamStore(
        tensors=tensors,
        config_hash=config_hash({"a": 1}),
        creation_seed=123,
        metadata={"kind": "generator", "config": {"a": 1}},
    )


def test_round_trip_bit_exact(store, tmp_path):
    path = tmp_path / "ckpt.ntck"
    store.save(path)
    loaded = ParamStore.load(path)
    assert list(loaded.tensors) == list(store.tensors)
    for name in store.tensors:
        assert loaded.tensors[name].dtype == store.tensors[name].dtype
        assert np.array_equal(loaded.tensors[name], store.tensors[name])
    assert loaded.config_hash == store.config_hash
    assert loaded.creation_seed == 123
    assert loaded.format_version == FORMAT_VERSION
    loaded.save(tmp_path / "again.ntck")
    assert (tmp_path / "again.ntck").read_bytes() == path.read_bytes()


def test_serialization_is_byte_stable(store):
    assert store.to_bytes() == store.to_bytes()


def test_header_layout(store):
    blob = store.to_bytes()
    assert blob[:8] == MAGIC
    header_len = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + header_len])
    assert header["format_version"] == FORMAT_VERSION
    assert header["config_hash"] == store.config_hash
    names = [t["name"] for t in header["tensors"]]
    assert names == list(store.tensors)
    offsets = [t["offset"] for t in header["tensors"]]
    nbytes = [t["nbytes"] for t in header["tensors"]]
    assert offsets == [0, nbytes[0], nbytes[0] + nbytes[1]]
    # payload slices decode to the original tensors
    payload = blob[16 + header_len :]
    t0 = header["tensors"][0]
    arr = np.frombuffer(
        payload[t0["offset"] : t0["offset"] + t0["nbytes"]], dtype="<f4"
    ).reshape(t0["shape"])
    assert np.array_equal(arr, store.tensors["layer1.weight"])


def test_bad_magic_rejected(store, tmp_path):
    path = tmp_path / "ckpt.ntck"
    store.save(path)
    blob = b"XXXXXXXX" + path.read_bytes()[8:]
    with pytest.raises(CheckpointError, match="magic"):
        ParamStore.from_bytes(blob)


def test_truncated_payload_rejected(store, tmp_path):
    path = tmp_path / "ckpt.ntck"
    store.save(path)
    blob = path.read_bytes()[:-10]
    with pytest.raises(CheckpointError, match="truncated"):
        ParamStore.from_bytes(blob)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        ParamStore.load(tmp_path / "nope.ntck")


def test_unknown_version_rejected(store):
    store.format_version = 99
    blob = store.to_bytes()
    with pytest.raises(CheckpointError, match="format_version"):
        ParamStore.from_bytes(blob)


def test_missing_version_field_rejected(store):
    blob = store.to_bytes()
    header_len = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + header_len])
    del header["format_version"]
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    rebuilt = MAGIC + len(new_header).to_bytes(8, "little") + new_header + blob[16 + header_len :]
    with pytest.raises(CheckpointError, match="format_version"):
        ParamStore.from_bytes(rebuilt)


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
