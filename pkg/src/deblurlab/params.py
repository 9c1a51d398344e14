"""Named-tensor parameter stores and their on-disk checkpoint format.

A checkpoint file is laid out as:

    8 bytes   magic ``NTCHKPT1``
    8 bytes   little-endian uint64: header length in bytes
    header    UTF-8 JSON: {format_version, config_hash, creation_seed,
              metadata, tensors: [{name, shape, dtype, offset, nbytes}]}
    payload   raw little-endian C-order tensor bytes at the stated offsets

The header is written with sorted keys and no timestamps, so identical
stores serialize to identical bytes and round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"NTCHKPT1"
FORMAT_VERSION = 1

_SUPPORTED_DTYPES = {"float16", "float32", "float64", "int32", "int64", "uint8"}


def config_hash(config_dict: dict) -> str:
    """SHA-256 of the canonical JSON encoding of a config dictionary."""
    canon = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class ParamStore:
    """Ordered map of tensor name -> array, plus provenance metadata.

    ``tensors`` preserves insertion order; every name is unique by dict
    construction. ``config_hash`` ties the weights to the config that
    shaped them and is verified on load by consumers.
    """

    tensors: dict[str, np.ndarray]
    config_hash: str
    creation_seed: int
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def total_parameters(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def to_bytes(self) -> bytes:
        manifest = []
        payloads = []
        offset = 0
        for name, arr in self.tensors.items():
            dtype = np.dtype(arr.dtype)
            if dtype.name not in _SUPPORTED_DTYPES:
                raise CheckpointError(f"unsupported tensor dtype {dtype.name!r} for {name!r}")
            raw = np.ascontiguousarray(arr.astype(dtype.newbyteorder("<"), copy=False)).tobytes()
            manifest.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": dtype.name,
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            payloads.append(raw)
            offset += len(raw)
        header = {
            "format_version": self.format_version,
            "config_hash": self.config_hash,
            "creation_seed": self.creation_seed,
            "metadata": self.metadata,
            "tensors": manifest,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return b"".join(
            [MAGIC, len(header_bytes).to_bytes(8, "little"), header_bytes, *payloads]
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        if len(blob) < 16 or blob[:8] != MAGIC:
            raise CheckpointError("not a named-tensor checkpoint (bad magic)")
        header_len = int.from_bytes(blob[8:16], "little")
        if 16 + header_len > len(blob):
            raise CheckpointError("truncated checkpoint header")
        try:
            header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
        if "format_version" not in header:
            raise CheckpointError("checkpoint header is missing format_version")
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format_version {header['format_version']}"
            )
        payload = blob[16 + header_len :]
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            name = entry["name"]
            dtype = entry["dtype"]
            if dtype not in _SUPPORTED_DTYPES:
                raise CheckpointError(f"unsupported tensor dtype {dtype!r} for {name!r}")
            lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
            if hi > len(payload):
                raise CheckpointError(f"truncated payload for tensor {name!r}")
            arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(dtype).newbyteorder("<"))
            tensors[name] = arr.reshape(entry["shape"]).astype(dtype, copy=True)
        return cls(
            tensors=tensors,
            config_hash=header["config_hash"],
            creation_seed=header["creation_seed"],
            metadata=header.get("metadata", {}),
            format_version=header["format_version"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint file not found: {path}")
        return cls.from_bytes(path.read_bytes())
