"""Checkpoint container: a JSON manifest plus one binary blob.

The manifest lists every tensor with name, dtype, shape, byte offset/length
and a CRC32C (Castagnoli) checksum; the blob stores little-endian IEEE-754
values in manifest order. Saving sorts tensor names, so identical state
always produces identical bytes; loading verifies checksums and shapes and
reproduces every tensor bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class TensorShapeError(CheckpointError):
    pass


class FormatVersionError(CheckpointError):
    pass


def _crc32c_table() -> np.ndarray:
    poly = 0x82F63B78  # Castagnoli, reflected
    table = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table[i] = crc
    return table


_CRC_TABLE = _crc32c_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC32C (Castagnoli) of a byte string."""
    crc = ~crc & 0xFFFFFFFF
    table = _CRC_TABLE
    for b in data:
        crc = (crc >> 8) ^ int(table[(crc ^ b) & 0xFF])
    return ~crc & 0xFFFFFFFF


@dataclass
class Checkpoint:
    """Named tensor map plus training metadata."""

    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write manifest + blob into the directory ``path`` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    blob = bytearray()
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        if arr.dtype.name not in _DTYPE_TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype(_DTYPE_TAGS[arr.dtype.name]).tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "byte_offset": len(blob),
            "byte_length": len(raw),
            "crc32c": crc32c(raw),
        })
        blob.extend(raw)
    manifest = {"format_version": FORMAT_VERSION, "meta": ckpt.meta, "tensors": entries}
    (root / BLOB_NAME).write_bytes(bytes(blob))
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                      encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    blob_path = root / BLOB_NAME
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"no checkpoint at {root} (need {MANIFEST_NAME} + {BLOB_NAME})")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{root}: unknown format version {version!r}")
    blob = blob_path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        off, length = entry["byte_offset"], entry["byte_length"]
        raw = blob[off:off + length]
        if len(raw) != length:
            raise ChecksumError(f"{root}: blob truncated while reading {name}")
        if crc32c(raw) != entry["crc32c"]:
            raise ChecksumError(f"{root}: checksum mismatch for tensor {name}")
        dtype = entry["dtype"]
        if dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"{root}: {name} has unsupported dtype {dtype}")
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[dtype]).astype(dtype)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise TensorShapeError(
                f"{root}: tensor {name} has {arr.size} values but manifest shape {shape}")
        tensors[name] = arr.reshape(shape)
    return Checkpoint(tensors=tensors, meta=manifest.get("meta", {}))
