"""Weight archive: JSON manifest followed by raw little-endian float32 data.

Layout::

    b"CDSMW\\x00\\x01\\x00"          8-byte magic + format version
    uint64 LE                      manifest length in bytes
    manifest (UTF-8 JSON)          {"config": {...}, "tensors": [{name, shape, offset, nbytes}]}
    data                           concatenated tensors, offsets relative to data start
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, MissingInputError
from .generator import GeneratorConfig, GeneratorWeights

MAGIC = b"CDSMW\x00\x01\x00"


def to_bytes(weights: GeneratorWeights) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, t in weights.items():
        raw = t.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"config": weights.config.to_dict(), "tensors": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def from_bytes(blob: bytes) -> GeneratorWeights:
    if blob[: len(MAGIC)] != MAGIC:
        raise ConfigError("not a CDSM weight archive (bad magic)")
    (mlen,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    manifest = json.loads(blob[start : start + mlen].decode())
    data = memoryview(blob)[start + mlen :]
    tensors = OrderedDict()
    for e in manifest["tensors"]:
        arr = np.frombuffer(data[e["offset"] : e["offset"] + e["nbytes"]], dtype="<f4")
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(e["shape"]))
    return GeneratorWeights(GeneratorConfig.from_dict(manifest["config"]), tensors)


def save_weights(weights: GeneratorWeights, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(weights))
    return path


def load_weights(path) -> GeneratorWeights:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"weight archive not found: {path}")
    return from_bytes(path.read_bytes())


def fingerprint(weights: GeneratorWeights) -> str:
    """sha256 of the serialized archive; identical for byte-identical weights."""
    return hashlib.sha256(to_bytes(weights)).hexdigest()
