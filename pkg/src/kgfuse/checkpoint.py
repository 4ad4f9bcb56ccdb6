"""Versioned binary checkpoints: config, parameters, optimizer moments, step.

Layout (little-endian throughout): magic ``RVLCKPT1``; u32 config-text
length + UTF-8 config; u64 step counter; u64 RNG seed; u32 tensor count;
then per tensor a u32 name length, the UTF-8 name, u32 ndim, u64 dims, and
the float64 payload.  Optimizer moments are stored as tensors named
``opt_m.<name>`` / ``opt_v.<name>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .errors import ValidationError
from .optim import AdamState
from .tensor import Parameters

CHECKPOINT_MAGIC = b"RVLCKPT1"


@dataclass
class Checkpoint:
    config: Config
    step: int
    seed: int
    tensors: dict[str, np.ndarray]

    def parameter_names(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith("opt_")]

    def load_into(self, params: Parameters, state: AdamState | None = None) -> None:
        params.load_data({n: self.tensors[n] for n in self.parameter_names()})
        if state is not None:
            for name in params.names():
                state.m[name] = self.tensors[f"opt_m.{name}"].copy()
                state.v[name] = self.tensors[f"opt_v.{name}"].copy()
            state.t = self.step


def _write_tensor(fh, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def save_checkpoint(path, config: Config, step: int, params: Parameters,
                    state: AdamState) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, tensor in params.items():
        tensors.append((name, tensor.data))
    for name in params.names():
        tensors.append((f"opt_m.{name}", state.m[name]))
        tensors.append((f"opt_v.{name}", state.v[name]))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        config_blob = config.to_text().encode("utf-8")
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<Q", config.seed))
        fh.write(struct.pack("<I", len(tensors)))
        for name, data in tensors:
            _write_tensor(fh, name, data)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise ValidationError(
                f"truncated checkpoint at byte offset {self.offset}")
        piece = self.blob[self.offset:self.offset + count]
        self.offset += count
        return piece

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    reader = _Reader(blob)
    magic = reader.take(8)
    if magic != CHECKPOINT_MAGIC:
        raise ValidationError(f"bad checkpoint magic at offset 0: {magic!r}")
    config_len = reader.u32()
    config = Config.from_text(reader.take(config_len).decode("utf-8"),
                              source=str(path))
    step = reader.u64()
    seed = reader.u64()
    count = reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u64() for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        payload = reader.take(8 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if reader.offset != len(blob):
        raise ValidationError(
            f"trailing bytes in checkpoint at offset {reader.offset}")
    return Checkpoint(config=config, step=step, seed=seed, tensors=tensors)
