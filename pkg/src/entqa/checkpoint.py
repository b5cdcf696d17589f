"""Versioned binary checkpoint container.

Layout (little-endian): magic "MTLQ", uint32 format version, length-
prefixed config digest, uint32 record count, then per record a length-
prefixed utf-8 name, uint32 ndim, uint32 dims, and a float32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"MTLQ"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_bytes(fh, blob: bytes):
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_exact(fh, n: int) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError("truncated checkpoint file")
    return blob


def _read_bytes(fh) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


def save_checkpoint(path, params: dict[str, Tensor], config_digest: str):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_bytes(fh, config_digest.encode())
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = params[name].data
            _write_bytes(fh, name.encode())
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    """Returns (name -> float64 array, config digest)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        digest = _read_bytes(fh).decode()
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays = {}
        for _ in range(count):
            name = _read_bytes(fh).decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            payload = _read_exact(fh, 4 * size)
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape) \
                .astype(np.float64)
    return arrays, digest


def restore_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray]):
    """Copy loaded arrays into live parameter tensors, name-checked."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter name mismatch: missing={sorted(missing)[:5]}, "
            f"extra={sorted(extra)[:5]}")
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {p.data.shape} vs "
                f"{arrays[name].shape}")
        p.data = arrays[name].copy()
