"""Self-contained checkpoint files.

Layout: 4-byte magic, uint32 little-endian manifest length, a JSON manifest
(format version, step, RNG state, resolved configs, array names/shapes/byte
offsets, metadata), then one binary blob of float32 little-endian values in
manifest order.  Loading reproduces every stored array bit-exactly at 32-bit
precision.  Version, truncation, and shape problems raise distinct errors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NPCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    code = 1


class CheckpointVersionError(CheckpointError):
    code = 3


class CheckpointTruncatedError(CheckpointError):
    code = 4


class CheckpointShapeError(CheckpointError):
    code = 5


@dataclass
class Checkpoint:
    step: int
    rng_state: dict
    configs: dict
    arrays: dict[str, np.ndarray]  # float64 in memory, float32 in the file
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    names = sorted(ckpt.arrays)
    entries = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "configs": ckpt.configs,
        "meta": ckpt.meta,
        "arrays": entries,
        "blob_bytes": offset,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointVersionError(f"not a checkpoint file: {path}")
    (mlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + mlen:
        raise CheckpointTruncatedError(f"truncated manifest in {path}")
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointVersionError(f"unreadable manifest in {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"format version {manifest.get('format_version')} unsupported (want {FORMAT_VERSION})"
        )
    blob = data[8 + mlen :]
    declared = manifest.get("blob_bytes", -1)
    if len(blob) < declared:
        raise CheckpointTruncatedError(
            f"truncated blob in {path}: {len(blob)} bytes present, {declared} declared"
        )
    arrays: dict[str, np.ndarray] = {}
    total = 0
    for entry in manifest["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) * 4 if shape else 4
        start = int(entry["offset"])
        if start + size > declared:
            raise CheckpointShapeError(
                f"array {entry['name']!r} with shape {shape} exceeds the declared blob"
            )
        raw = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=start)
        arrays[entry["name"]] = raw.reshape(shape).astype(np.float64)
        total += size
    if total != declared:
        raise CheckpointShapeError(
            f"declared shapes cover {total} bytes but the blob declares {declared}"
        )
    return Checkpoint(
        step=int(manifest["step"]),
        rng_state=manifest["rng_state"],
        configs=manifest["configs"],
        arrays=arrays,
        meta=manifest.get("meta", {}),
    )


def rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))  # plain dict of ints/strings


def rng_from_json(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
