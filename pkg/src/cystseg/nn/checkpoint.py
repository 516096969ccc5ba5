"""Model checkpoints: magic, JSON header, raw float32 little-endian buffers.

The header (canonical JSON, sorted keys) lists every parameter and buffer
with its shape in traversal order; the payload is their raw bytes in that
exact order. Saving a freshly loaded checkpoint reproduces the file byte
for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..config import ModelConfig
from ..errors import CorruptCheckpointError, IoError, VersionMismatchError
from .layers import PatchClassifier

MAGIC = b"CYSTNET1"
FORMAT_VERSION = 1


def _entries(model: PatchClassifier) -> list[tuple[str, np.ndarray, str]]:
    out = [(name, p.data, "param") for name, p in model.named_parameters()]
    out.extend((name, b, "buffer") for name, b in model.named_buffers())
    return out


def save_checkpoint(model: PatchClassifier, path: str | Path,
                    extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = _entries(model)
    header = {
        "format": FORMAT_VERSION,
        "dtype": "float32",
        "model": {
            "stem_channels": model.config.stem_channels,
            "stage_channels": list(model.config.stage_channels),
            "blocks_per_stage": model.config.blocks_per_stage,
            "num_classes": model.config.num_classes,
        },
        "seed": model.seed,
        "entries": [
            {"name": name, "shape": list(arr.shape), "kind": kind}
            for name, arr, kind in entries
        ],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, arr, _ in entries:
                fh.write(arr.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[PatchClassifier, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 4:
        raise CorruptCheckpointError(f"{path}: file too short")
    if blob[:len(MAGIC)] != MAGIC:
        raise VersionMismatchError(f"{path}: bad checkpoint magic {blob[:len(MAGIC)]!r}")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if len(blob) < start + header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format {header.get('format')} != {FORMAT_VERSION}"
        )
    if header.get("dtype") != "float32":
        raise VersionMismatchError(f"{path}: unsupported dtype {header.get('dtype')!r}")

    model_doc = header.get("model", {})
    try:
        config = ModelConfig(
            stem_channels=int(model_doc["stem_channels"]),
            stage_channels=tuple(model_doc["stage_channels"]),
            blocks_per_stage=int(model_doc["blocks_per_stage"]),
            num_classes=int(model_doc["num_classes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: bad model section: {exc}") from exc
    model = PatchClassifier(config, seed=int(header.get("seed", 0)))

    entries = _entries(model)
    listed = header.get("entries", [])
    if len(listed) != len(entries):
        raise CorruptCheckpointError(
            f"{path}: header lists {len(listed)} arrays, model has {len(entries)}"
        )
    offset = start + header_len
    for (name, arr, kind), doc in zip(entries, listed):
        if doc.get("name") != name or doc.get("kind") != kind:
            raise CorruptCheckpointError(
                f"{path}: entry {doc.get('name')!r}/{doc.get('kind')!r} does not match "
                f"model array {name!r}/{kind!r}"
            )
        if tuple(doc.get("shape", ())) != arr.shape:
            raise CorruptCheckpointError(
                f"{path}: {name}: shape {doc.get('shape')} != model shape {list(arr.shape)}"
            )
        nbytes = arr.size * 4
        if len(blob) < offset + nbytes:
            raise CorruptCheckpointError(f"{path}: truncated payload at {name}")
        values = np.frombuffer(blob, dtype="<f4", count=arr.size, offset=offset)
        arr[...] = values.reshape(arr.shape)
        offset += nbytes
    if offset != len(blob):
        raise CorruptCheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return model, header.get("extra", {})
