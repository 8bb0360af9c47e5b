"""Binary checkpoints: little-endian, versioned header.

Layout: magic b"GVMC", u32 version, 32-byte config hash, u64 step counter,
u32 metadata length + UTF-8 JSON metadata (parameter layout table, ansatz
config, RNG state), u64 parameter count, float64 parameter vector.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import HashMismatch
from .config import AnsatzConfig, ParameterLayout

__all__ = ["Checkpoint", "config_hash", "save_checkpoint", "load_checkpoint"]

MAGIC = b"GVMC"
VERSION = 1


def config_hash(config_dict: dict) -> bytes:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


@dataclass
class Checkpoint:
    params: np.ndarray
    layout: ParameterLayout
    ansatz_config: AnsatzConfig
    step: int
    cfg_hash: bytes
    rng_state: dict | None = None

    def verify_hash(self, config_dict: dict) -> None:
        if config_hash(config_dict) != self.cfg_hash:
            raise HashMismatch("checkpoint was produced by a different configuration")


def save_checkpoint(
    path,
    params: np.ndarray,
    layout: ParameterLayout,
    ansatz_config: AnsatzConfig,
    config_dict: dict,
    step: int = 0,
    rng_state: dict | None = None,
) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    meta = json.dumps(
        {
            "layout": layout.table(),
            "ansatz": ansatz_config.to_dict(),
            "rng_state": rng_state,
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(config_hash(config_dict))
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg_hash = data[8:40]
    (step,) = struct.unpack_from("<Q", data, 40)
    (meta_len,) = struct.unpack_from("<I", data, 48)
    meta = json.loads(data[52 : 52 + meta_len].decode())
    pos = 52 + meta_len
    (n_params,) = struct.unpack_from("<Q", data, pos)
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=pos + 8).copy()
    return Checkpoint(
        params=params,
        layout=ParameterLayout.from_table(meta["layout"]),
        ansatz_config=AnsatzConfig.from_dict(meta["ansatz"]),
        step=int(step),
        cfg_hash=cfg_hash,
        rng_state=meta.get("rng_state"),
    )
