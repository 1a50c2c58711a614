"""Bit-exact checkpoint format.

Layout: magic "VRWK"; u32 LE version; u32 LE config-JSON length; config JSON
(UTF-8); u32 LE tensor count; then per tensor: u16 LE name length, name
UTF-8, u8 rank, u32 LE dims, float32 LE row-major payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointCorruptError, CheckpointFormatError, ConfigError
from .model import Model, ModelConfig, init_model, named_parameters, set_parameter

MAGIC = b"VRWK"
VERSION = 1


def save_checkpoint(path, model: Model):
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    tensors = list(named_parameters(model))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_json)))
        f.write(cfg_json)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointCorruptError(f"file ends early while reading {what}")
    return buf


def load_checkpoint(path, dtype=np.float32):
    """Rebuild (model, config) from a checkpoint file."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise CheckpointFormatError("bad magic; not a model checkpoint")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read(f, 4, "config length"))
        try:
            cfg = ModelConfig.from_dict(json.loads(_read(f, cfg_len, "config").decode("utf-8")))
        except (json.JSONDecodeError, UnicodeDecodeError, ConfigError) as e:
            raise CheckpointFormatError(f"bad config block: {e}") from None
        (count,) = struct.unpack("<I", _read(f, 4, "tensor count"))
        model = init_model(cfg, seed=0, dtype=dtype)
        expected = dict(named_parameters(model))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read(f, 1, "rank"))
            shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank, "dims"))
            payload = _read(f, 4 * int(np.prod(shape, dtype=np.int64)), f"tensor {name}")
            if name not in expected:
                raise CheckpointFormatError(f"tensor {name!r} not in model built from config")
            if expected[name].shape != shape:
                raise CheckpointFormatError(
                    f"tensor {name!r} has shape {shape}, config implies {expected[name].shape}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(dtype)
            set_parameter(model, name, arr)
            seen.add(name)
        if seen != set(expected):
            missing = sorted(set(expected) - seen)
            raise CheckpointFormatError(f"checkpoint missing tensors: {missing[:5]}")
        if f.read(1):
            raise CheckpointFormatError("trailing bytes after tensor table")
    return model, cfg
