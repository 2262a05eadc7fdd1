"""Binary 16-bit PGM images and paired-image dataset directories."""
import json
from pathlib import Path

import numpy as np

MAXVAL = 65535


def to_unit(a, lo=None, hi=None):
    """Rescale ``a`` linearly to [0, 1] (used for maps that are not images)."""
    a = np.asarray(a, dtype=np.float64)
    lo = np.nanmin(a) if lo is None else lo
    hi = np.nanmax(a) if hi is None else hi
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def write_pgm(path, image):
    """Write a [h, w] array with values in [0, 1] (clipped) as a P5 16-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    while img.ndim > 2 and img.shape[-1] == 1:
        img = img[..., 0]
    while img.ndim > 2 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 1:
        img = img[None, :]
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2D image, got shape {img.shape}")
    q = np.rint(np.clip(np.nan_to_num(img), 0.0, 1.0) * MAXVAL).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1  # single whitespace after maxval
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def save_dataset(directory, pair, manifest):
    """Write ``pair`` as ``input_XXXX.pgm``/``target_XXXX.pgm`` plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (x, y) in enumerate(zip(pair.inputs, pair.targets)):
        write_pgm(d / f"input_{i:05d}.pgm", x)
        write_pgm(d / f"target_{i:05d}.pgm", y)
    man = dict(manifest)
    man.setdefault("seed", pair.seed)
    man["count"] = len(pair)
    (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))


def load_dataset(directory):
    from .datagen import DatasetPair

    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    n = man["count"]
    xs = np.stack([read_pgm(d / f"input_{i:05d}.pgm") for i in range(n)])[..., None]
    ys = np.stack([read_pgm(d / f"target_{i:05d}.pgm") for i in range(n)])[..., None]
    return DatasetPair(xs, ys, seed=man.get("seed", 0), split=man.get("split", {})), man
