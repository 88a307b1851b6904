"""Single-file tensor container.

Layout::

    8 bytes   magic b"ACTLMCK1"
    8 bytes   little-endian uint64 header length H
    H bytes   UTF-8 JSON header
    payload   concatenated little-endian float64 tensors

The header lists each tensor's name, shape and byte offset, carries free-form
metadata (config, codebook pairing, vocabulary, ...), the config hash and a
SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path

import numpy as np

MAGIC = b"ACTLMCK1"
_LE_F8 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Unreadable, truncated or corrupted checkpoint."""


class ConfigHashMismatch(UserWarning):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None,
                    config_hash: str | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=_LE_F8, order="C")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": 1,
        "tensors": entries,
        "meta": meta or {},
        "config_hash": config_hash,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def load_checkpoint(path: str | Path, expected_config_hash: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, header)``; a config-hash mismatch only warns."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = blob[16 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype=_LE_F8).astype(np.float64).reshape(entry["shape"])
    if expected_config_hash is not None and header.get("config_hash") != expected_config_hash:
        warnings.warn(
            f"{path}: config hash {header.get('config_hash')} differs from the current {expected_config_hash}",
            ConfigHashMismatch,
            stacklevel=2,
        )
    return tensors, header
