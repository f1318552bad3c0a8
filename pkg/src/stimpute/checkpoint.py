"""Binary checkpoint format for parameter stores.

Layout: magic ``STIM``, format version (uint32 LE), then one record per
parameter: name length (uint32 LE), UTF-8 name, rank (uint32 LE), extents
(uint32 LE each), and the values as little-endian float32, row-major. Records
run to end of file. Values are stored at 32-bit precision; in-memory parameters
stay float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"STIM"
FORMAT_VERSION = 1


def save_params(path, params) -> None:
    """Write an ordered mapping of name -> ndarray to ``path``."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name, array in params.items():
            arr = np.ascontiguousarray(array, dtype=np.float64)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f4").tobytes())


def load_params(path) -> dict:
    """Read a checkpoint back as an ordered dict of name -> float64 ndarray."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    params: dict[str, np.ndarray] = {}
    offset = 8
    total = len(blob)
    while offset < total:
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated record at byte {offset}") from exc
        if name in params:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        params[name] = values.astype(np.float64).reshape(shape)
    return params
