"""Binary tensor container shared by weight checkpoints and dataset dumps.

Layout (little-endian)::

    b"PFNN"  u32 version  u32 group_count
    per group:   u32 tensor_count
    per tensor:  u32 ndim, ndim * u32 dims, prod(dims) * f64 data

A weight checkpoint has one group per parametric layer ([W, b]).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"PFNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_groups(f: BinaryIO, groups: Sequence[Sequence[np.ndarray]]) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<II", VERSION, len(groups)))
    for group in groups:
        f.write(struct.pack("<I", len(group)))
        for arr in group:
            a = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d shape, unlike ascontiguousarray
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def _read(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated tensor file")
    return b


def read_groups(f: BinaryIO) -> list[list[np.ndarray]]:
    if _read(f, 4) != MAGIC:
        raise CheckpointError("bad magic, not a PFNN tensor file")
    version, count = struct.unpack("<II", _read(f, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported PFNN version {version}")
    groups = []
    for _ in range(count):
        (nt,) = struct.unpack("<I", _read(f, 4))
        group = []
        for _ in range(nt):
            (ndim,) = struct.unpack("<I", _read(f, 4))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            group.append(np.frombuffer(_read(f, 8 * size), dtype="<f8").reshape(shape).astype(float))
        groups.append(group)
    return groups


def save_tensors(path: str | Path, groups: Sequence[Sequence[np.ndarray]]) -> None:
    with open(path, "wb") as f:
        write_groups(f, groups)


def load_tensors(path: str | Path) -> list[list[np.ndarray]]:
    with open(path, "rb") as f:
        return read_groups(f)


def save_weights(net, path: str | Path) -> None:
    groups = [[p["W"], p["b"]] for p in net.parameters() if p]
    save_tensors(path, groups)


def load_weights(net, path: str | Path) -> None:
    groups = load_tensors(path)
    n_param_layers = sum(1 for p in net.parameters() if p)
    if len(groups) != n_param_layers:
        raise CheckpointError(f"checkpoint has {len(groups)} layers, network has {n_param_layers}")
    net.set_weights([a for g in groups for a in g])
