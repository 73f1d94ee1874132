"""Binary model checkpoints.

Layout (all integers little-endian):

    magic            4 bytes  b"VGVT"
    version          u16      currently 1
    config length    u32      UTF-8 "key=value\\n" lines, one per config field
    config bytes
    tensor count     u32
    per tensor:
        name length  u16      UTF-8 name bytes follow
        rank         u32
        extents      u32 * rank
        values       f32 * prod(extents), row-major

Values are stored at 32-bit precision; loading yields float32 parameters,
so save -> load -> save is byte-identical and a loaded model's forward
outputs reproduce the saved model's bit-for-bit. Files are written to a
temp path and renamed into place so a failed save leaves nothing behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointVersionError,
)
from .model import VitConfig, VitModel
from .rng import SeededGenerator

MAGIC = b"VGVT"
VERSION = 1


def save_checkpoint(model: VitModel, path) -> None:
    """Serialize config and parameters; atomic on POSIX rename semantics."""
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)

    config_text = "".join(f"{k}={v}\n" for k, v in model.config.to_items())
    config_bytes = config_text.encode("utf-8")
    blob += struct.pack("<I", len(config_bytes))
    blob += config_bytes

    params = model.named_parameters()
    blob += struct.pack("<I", len(params))
    for name, tensor in params.items():
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()

    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(
                f"{self.path}: truncated checkpoint (needed {n} bytes at "
                f"offset {self.offset})"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> VitModel:
    """Parse and validate a checkpoint; no partial model on any failure."""
    raw = Path(path).read_bytes()
    reader = _Reader(raw, path)

    if reader.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not a checkpoint")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: file version {version} is unsupported; this build reads "
            f"version {VERSION}"
        )

    (config_len,) = reader.unpack("<I")
    try:
        config_text = reader.take(config_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"{path}: config block is not UTF-8") from exc
    items = {}
    for line in config_text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"{path}: malformed config line '{line}'")
        items[key.strip()] = value.strip()
    config = VitConfig.from_items(items)

    (count,) = reader.unpack("<I")
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size), dtype="<f4")
        table[name] = values.reshape(shape).astype(np.float32)
    if reader.offset != len(raw):
        raise CheckpointFormatError(
            f"{path}: {len(raw) - reader.offset} trailing bytes after tensor table"
        )

    # build the expected parameter skeleton, then fill it from the table
    skeleton = VitModel.initialize(config, SeededGenerator(0), dtype=np.float32)
    expected = skeleton.named_parameters()
    if set(expected) != set(table):
        missing = sorted(set(expected) - set(table))
        extra = sorted(set(table) - set(expected))
        raise CheckpointIntegrityError(
            f"{path}: tensor table mismatch with config (missing {missing}, "
            f"unexpected {extra})"
        )
    for name, tensor in expected.items():
        if table[name].shape != tensor.shape:
            raise CheckpointIntegrityError(
                f"{path}: tensor '{name}' has shape {table[name].shape}, config "
                f"implies {tensor.shape}"
            )
        if not np.isfinite(table[name]).all():
            raise CheckpointIntegrityError(f"{path}: tensor '{name}' holds NaN/Inf")
        tensor.data = table[name]
        tensor.grad = None
    return skeleton
