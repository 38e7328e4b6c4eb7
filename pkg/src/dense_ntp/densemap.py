"""Pixel-resolution label / depth-bin maps and their PGM/PPM file formats.

A :class:`DenseMap` is written as a binary PGM (P5) plus a sidecar text
header ``<file>.hdr`` holding ``ignore_value`` and ``kind``.  Maps whose
values exceed 255 (depth bins) use a 16-bit big-endian PGM.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DenseNTPError

SEMANTIC_IGNORE = 255
DEPTH_IGNORE = 0


@dataclass
class DenseMap:
    values: np.ndarray  # (height, width) non-negative ints
    ignore_value: int = SEMANTIC_IGNORE
    kind: str = "semantic"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"DenseMap values must be 2-D, got shape {self.values.shape}")
        if self.values.size and self.values.min() < 0:
            raise ValueError("DenseMap values must be non-negative")
        self.values = self.values.astype(np.int64, copy=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values != self.ignore_value

    def __eq__(self, other):
        if not isinstance(other, DenseMap):
            return NotImplemented
        return (
            self.ignore_value == other.ignore_value
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def depth(cls, values) -> "DenseMap":
        return cls(values, ignore_value=DEPTH_IGNORE, kind="depth")


def _read_token(buf: bytes, pos: int):
    while True:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def write_pgm(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    maxval = max(255, int(values.max()) if values.size else 0)
    if maxval > 65535:
        raise DenseNTPError(f"value {maxval} does not fit a 16-bit PGM")
    dtype = ">u1" if maxval <= 255 else ">u2"
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(values.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise DenseNTPError(f"{path}: not a binary PGM (magic {magic!r})")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    pos += 1  # single whitespace after maxval
    dtype = ">u1" if maxval <= 255 else ">u2"
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.int64)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, c = rgb.shape
    if c != 3:
        raise ValueError("PPM needs an (h, w, 3) array")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise DenseNTPError(f"{path}: not a binary PPM")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    _, pos = _read_token(buf, pos)
    pos += 1
    return np.frombuffer(buf, dtype=np.uint8, count=int(w) * int(h) * 3, offset=pos).reshape(int(h), int(w), 3)


def save_densemap(path, dm: DenseMap) -> None:
    write_pgm(path, dm.values)
    Path(str(path) + ".hdr").write_text(f"ignore_value={dm.ignore_value}\nkind={dm.kind}\n")


def load_densemap(path) -> DenseMap:
    values = read_pgm(path)
    hdr = Path(str(path) + ".hdr")
    meta = {"ignore_value": str(SEMANTIC_IGNORE), "kind": "semantic"}
    if hdr.exists():
        for line in hdr.read_text().splitlines():
            if "=" in line:
                key, val = line.split("=", 1)
                meta[key.strip()] = val.strip()
    return DenseMap(values, ignore_value=int(meta["ignore_value"]), kind=meta["kind"])


def colorize(labels: np.ndarray, ignore_value: int = SEMANTIC_IGNORE, seed: int = 0) -> np.ndarray:
    """Fixed pseudo-random palette; ignore pixels are black."""
    labels = np.asarray(labels)
    n = int(labels[labels != ignore_value].max(initial=0)) + 1
    palette = np.random.default_rng(seed).integers(32, 256, size=(n, 3), dtype=np.uint8)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    ok = labels != ignore_value
    out[ok] = palette[labels[ok]]
    return out
