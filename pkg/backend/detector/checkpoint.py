"""Parameter checkpoints: a flat binary file of named arrays behind a versioned header.

Layout (all integers little-endian):

    offset 0   4 bytes   magic b"WRBX"
    offset 4   uint32    format version (currently 1)
    offset 8   uint64    header length N in bytes
    offset 16  N bytes   UTF-8 JSON header
    offset 16+N          array payload

The header holds
    {"model": <ModelConfig>, "meta": {...},
     "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
where each array's `offset` is relative to the start of the payload and its
bytes are the C-ordered little-endian values. `meta` carries free-form run
information (epoch, seed, metrics).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np
import torch

from detector.model import ModelConfig, WeakRBoxDetector
from utils.errors import DataError

MAGIC = b"WRBX"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "bool": "|b1"}


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: WeakRBoxDetector, meta: Mapping[str, Any] | None = None) -> "Checkpoint":
        arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
        return cls(model.config, arrays, dict(meta or {}))

    def build_model(self) -> WeakRBoxDetector:
        model = WeakRBoxDetector(self.config)
        state = {name: torch.from_numpy(np.array(a)) for name, a in self.arrays.items()}
        model.load_state_dict(state)
        model.eval()
        return model


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries, chunks, offset = [], [], 0
    for name, array in checkpoint.arrays.items():
        dtype_name = str(array.dtype)
        if dtype_name not in _DTYPES:
            raise DataError(f"Cannot store array '{name}' of dtype {dtype_name}")
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        entries.append({"name": name, "dtype": dtype_name, "shape": list(array.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    header = json.dumps({"model": checkpoint.config.model_dump(mode="json"), "meta": checkpoint.meta,
                         "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    logging.info(f"Checkpoint written to {path} ({len(entries)} arrays, {offset} bytes)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint file.

    Raises:
        DataError: wrong magic, unsupported version, or a truncated / inconsistent file.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint {path} does not exist")
    data = path.read_bytes()
    if len(data) < _PREAMBLE.size:
        raise DataError(f"{path} is too short to be a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{path} is not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise DataError(f"{path} has checkpoint format version {version}, expected {FORMAT_VERSION}")

    start = _PREAMBLE.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        logging.error(f"Corrupt checkpoint header in {path}: {e}")
        raise DataError(f"{path} has a corrupt header") from e

    payload = memoryview(data)[start + header_len:]
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise DataError(f"{path} is truncated: array '{entry['name']}' ends at {hi} of {len(payload)}")
        array = np.frombuffer(payload[lo:hi], dtype=_DTYPES[entry["dtype"]])
        arrays[entry["name"]] = array.astype(entry["dtype"]).reshape(entry["shape"])
    return Checkpoint(ModelConfig.model_validate(header["model"]), arrays, header.get("meta", {}))


def load_model(path: Union[str, Path]) -> WeakRBoxDetector:
    return load_checkpoint(path).build_model()
