"""
Binary checkpoint format:

    b"BBLK" | u32 version | u32 header length | UTF-8 JSON header
    then, per tensor in declaration order: u32 rank | rank x u32 dims | float64 LE data

The header holds the model config, the step, the tensor names and whether the
Adam moments follow the parameters (m tensors, then v tensors, same order).
All integers are little-endian.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from src.encoder.config import ModelConfig
from src.encoder.optim import AdamState
from src.encoder.params import ModelParams
from src.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"BBLK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    step: int = 0
    state: AdamState | None = None
    extra: dict = field(default_factory=dict)


def _write_tensor(f: BinaryIO, t: np.ndarray) -> None:
    f.write(_U32.pack(t.ndim))
    f.write(struct.pack(f"<{t.ndim}I", *t.shape))
    f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_tensor(f: BinaryIO, name: str) -> np.ndarray:
    (rank,) = _U32.unpack(_read_exact(f, 4, f"{name} rank"))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name} dims"))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(f, 8 * count, f"{name} data"), dtype="<f8")
    return data.astype(np.float64).reshape(dims)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    header = {
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "names": list(ckpt.params),
        "has_optimizer": ckpt.state is not None,
        "extra": ckpt.extra,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION))
        f.write(_U32.pack(len(blob)))
        f.write(blob)
        for name in ckpt.params:
            _write_tensor(f, ckpt.params[name])
        if ckpt.state is not None:
            for moments in (ckpt.state.m, ckpt.state.v):
                for name in ckpt.params:
                    _write_tensor(f, moments[name])
    tmp.replace(path)
    logger.info("wrote checkpoint %s (step %d)", path, ckpt.step)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = _U32.unpack(_read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (length,) = _U32.unpack(_read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, length, "header").decode("utf-8"))
            config = ModelConfig.from_dict(header["config"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

        names = header["names"]
        params = ModelParams({name: _read_tensor(f, name) for name in names})
        state = None
        if header.get("has_optimizer"):
            m = ModelParams({name: _read_tensor(f, f"m[{name}]") for name in names})
            v = ModelParams({name: _read_tensor(f, f"v[{name}]") for name in names})
            state = AdamState(m, v, int(header["step"]))
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last tensor")

    try:
        params.check_shapes(config)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return Checkpoint(config, params, int(header["step"]), state, header.get("extra", {}))
