"""Self-describing binary checkpoints for models and training state.

Layout, all little-endian:

    bytes 0..7    magic b"FMCK0001"
    bytes 8..11   uint32 header length N
    bytes 12..    N bytes of UTF-8 JSON header
    rest          raw tensor payload, concatenated row-major in header order

The header records the format version, the checkpoint kind ("model" or
"train_state"), the backbone/codec configurations, a tensor directory
(name, shape, dtype per entry), and a free-form "extra" dict used by the
trainer for step/phase/rng bookkeeping.  Loading verifies the magic, the
version, and that the payload length matches the directory exactly, so a
truncated or corrupted file fails loudly instead of yielding partial state.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .backbone import Backbone, BackboneConfig
from .codec import Codec

MAGIC = b"FMCK0001"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int32": np.int32,
    "int64": np.int64,
    "uint8": np.uint8,
    "bool": np.bool_,
}


class CheckpointError(Exception):
    """Raised when a checkpoint file cannot be parsed or fails validation."""


def _dtype_name(arr: np.ndarray) -> str:
    name = arr.dtype.name
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    return name


def write_checkpoint(
    path,
    *,
    kind: str,
    backbone_config: dict,
    codec_config: dict,
    tensors: dict[str, np.ndarray],
    extra: dict | None = None,
    backbone_seed: int = 0,
) -> None:
    if kind not in ("model", "train_state"):
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    directory = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        directory.append(
            {"name": name, "shape": list(arr.shape), "dtype": _dtype_name(arr)}
        )
        blobs.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "backbone": backbone_config,
        "backbone_seed": int(backbone_seed),
        "codec": codec_config,
        "tensors": directory,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint file into (header, {name: array})."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    (header_len,) = struct.unpack("<I", data[8:12])
    header_end = 12 + header_len
    if header_end > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    tensors = {}
    offset = header_end
    for entry in header.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        dtype = np.dtype(_DTYPES[entry["dtype"]]).newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        end = offset + nbytes
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']!r}")
        arr = np.frombuffer(data[offset:end], dtype=dtype).reshape(shape)
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return header, tensors


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------


def model_tensors(backbone: Backbone) -> dict[str, np.ndarray]:
    return {
        "model." + name: p.detach().cpu().numpy()
        for name, p in backbone.state_dict().items()
    }


def save_model(path, backbone: Backbone, codec: Codec, extra: dict | None = None) -> None:
    write_checkpoint(
        path,
        kind="model",
        backbone_config=backbone.config.to_dict(),
        codec_config=codec.config(),
        tensors=model_tensors(backbone),
        extra=extra,
        backbone_seed=backbone.seed,
    )


def restore_backbone(header: dict, tensors: dict[str, np.ndarray]) -> Backbone:
    config = BackboneConfig.from_dict(header["backbone"])
    backbone = Backbone(config, seed=int(header.get("backbone_seed", 0)))
    state = {}
    for name, _ in backbone.state_dict().items():
        key = "model." + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key!r}")
        state[name] = torch.from_numpy(tensors[key].copy())
    extra_keys = [k for k in tensors if k.startswith("model.") and k[6:] not in state]
    if extra_keys:
        raise CheckpointError(f"checkpoint has unexpected model tensors {extra_keys}")
    backbone.load_state_dict(state)
    return backbone


def load_model(path) -> tuple[Backbone, Codec]:
    """Load a model checkpoint (either kind carries the full model)."""
    header, tensors = read_checkpoint(path)
    backbone = restore_backbone(header, tensors)
    codec = Codec.from_config(header["codec"])
    return backbone, codec
