"""Versioned text checkpoint files: a JSON meta block plus named float64 arrays.

Values are written with repr() so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

MAGIC = "steerlab-weights v1"


def save_arrays(path, meta: dict, arrays: dict) -> None:
    """Write meta + named arrays atomically (write-then-rename)."""
    path = os.fspath(path)
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "w") as fh:
            fh.write(MAGIC + "\n")
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for name in sorted(arrays):
                arr = np.asarray(arrays[name], dtype=np.float64)
                dims = " ".join(str(d) for d in arr.shape)
                fh.write(f"array {name} {arr.ndim} {dims}\n")
                fh.write(" ".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_arrays(path) -> tuple[dict, dict]:
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (header {magic!r}, expected {MAGIC!r})")
        meta = json.loads(fh.readline())
        arrays = {}
        while True:
            header = fh.readline()
            if not header:
                break
            parts = header.split()
            if parts[0] != "array":
                raise ValueError(f"corrupt checkpoint: unexpected line {header!r}")
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
            flat = fh.readline().split()
            arr = np.array([float(v) for v in flat], dtype=np.float64)
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"corrupt checkpoint: array {name} size mismatch")
            arrays[name] = arr.reshape(shape)
    return meta, arrays
