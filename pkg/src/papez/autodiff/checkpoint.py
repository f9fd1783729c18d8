"""Binary parameter container.

Layout: the ASCII line ``PAPEZ-CKPT v1``, then one record per tensor made of
a text line ``<name> <rank> <dim_1> ... <dim_rank>`` followed by the raw
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

HEADER = b"PAPEZ-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER)
        for name, arr in arrays.items():
            if not name or any(c.isspace() for c in name):
                raise CheckpointError(f"invalid record name {name!r}")
            arr = np.asarray(arr)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {arr.ndim} {dims}".rstrip().encode("ascii") + b"\n")
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_arrays(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(HEADER):
        raise CheckpointError(f"{path}: missing PAPEZ-CKPT v1 header")
    pos = len(HEADER)
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated record header")
        fields = blob[pos:end].decode("ascii").split()
        pos = end + 1
        try:
            name, rank = fields[0], int(fields[1])
            dims = tuple(int(d) for d in fields[2:2 + rank])
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed record header {fields!r}") from exc
        if len(dims) != rank or len(fields) != 2 + rank:
            raise CheckpointError(f"{path}: rank/dims mismatch for {name}")
        if name in out:
            raise CheckpointError(f"{path}: duplicate record {name}")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for {name}")
        out[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    return out
