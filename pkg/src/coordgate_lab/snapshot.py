"""Textual tensor snapshots: a header per tensor, then row-major values.

::

    # coordgate-lab snapshot v1
    tensor conv0.weight 3 7 1 3
    0.12345678901234567
    ...

Values are written with 17 significant digits, so a save/load round trip
is exact.
"""
from pathlib import Path

import numpy as np

HEADER = "# coordgate-lab snapshot v1"


def dumps(tensors):
    lines = [HEADER]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name may not contain whitespace: {name!r}")
        lines.append(" ".join(["tensor", name, str(arr.ndim)] + [str(d) for d in arr.shape]))
        lines.extend(f"{v:.17g}" for v in arr.reshape(-1))
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError("not a coordgate-lab snapshot")
    out = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] != "tensor":
            raise ValueError(f"line {i + 1}: expected 'tensor' header")
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        n = int(np.prod(shape, dtype=np.int64))
        vals = np.array([float(v) for v in lines[i + 1:i + 1 + n]], dtype=np.float64)
        if vals.size != n:
            raise ValueError(f"tensor {name}: expected {n} values, found {vals.size}")
        out[name] = vals.reshape(shape)
        i += 1 + n
    return out


def save(path, tensors):
    Path(path).write_text(dumps(tensors))


def load(path):
    return loads(Path(path).read_text())
