"""Binary parameter store.

File layout: magic ``IKNT``, u32 format version, u64 config length, the
config as canonical JSON, then one record per tensor sorted by name:
u32 name length, name bytes, u32 rank, rank u64 dims, float32
little-endian data. Integer state (batch counters) is stored as float32
and cast back on load.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointFormatError, ConfigMismatchError
from .config import ModelConfig

MAGIC = b"IKNT"
FORMAT_VERSION = 1

_INT_SUFFIX = "num_batches_tracked"


@dataclass(frozen=True)
class ParameterStore:
    """A model config plus a named-tensor snapshot of its state."""

    config: ModelConfig
    tensors: dict[str, torch.Tensor]


def store_from_model(config: ModelConfig, model: torch.nn.Module) -> ParameterStore:
    tensors = {
        name: value.detach().clone()
        for name, value in model.state_dict().items()
    }
    return ParameterStore(config=config, tensors=tensors)


def model_from_store(store: ParameterStore) -> torch.nn.Module:
    from .nets import build_model

    model = build_model(store.config)
    try:
        model.load_state_dict(store.tensors, strict=True)
    except RuntimeError as exc:
        raise ConfigMismatchError(f"checkpoint does not fit {store.config.kind}: {exc}") from exc
    return model


def save_checkpoint(store: ParameterStore, path: str | Path) -> None:
    path = Path(path)
    config_json = json.dumps(
        store.config.to_dict(), sort_keys=True, separators=(",", ":")
    ).encode()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<Q", len(config_json)), config_json]
    for name in sorted(store.tensors):
        tensor = store.tensors[name]
        data = tensor.detach().cpu().to(torch.float32).numpy()
        encoded = name.encode()
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> ParameterStore:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a parameter store")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported store version {version}")
    (config_len,) = struct.unpack_from("<Q", blob, 8)
    offset = 16
    if offset + config_len > len(blob):
        raise CheckpointFormatError(f"{path}: truncated config block")
    try:
        config = ModelConfig.from_dict(json.loads(blob[offset:offset + config_len]))
    except Exception as exc:
        raise CheckpointFormatError(f"{path}: bad config block: {exc}") from exc
    offset += config_len

    tensors: dict[str, torch.Tensor] = {}
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode()
            if len(name.encode()) != name_len:
                raise CheckpointFormatError(f"{path}: truncated record name")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            count = 1
            for d in dims:
                count *= d
            end = offset + 4 * count
            if end > len(blob):
                raise CheckpointFormatError(f"{path}: truncated data for {name!r}")
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset = end
        except struct.error as exc:
            raise CheckpointFormatError(f"{path}: truncated record header") from exc
        tensor = torch.from_numpy(data.copy()).reshape(dims)
        if name.endswith(_INT_SUFFIX):
            tensor = tensor.to(torch.int64)
        tensors[name] = tensor

    if expect_kind is not None and config.kind != expect_kind:
        raise ConfigMismatchError(
            f"{path} holds a {config.kind!r} model, expected {expect_kind!r}"
        )
    return ParameterStore(config=config, tensors=tensors)
