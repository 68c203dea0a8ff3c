"""PGM image files and plain-text kernel files.

Images: binary P5 and ASCII P2, 8- or 16-bit, scaled to [0, 1] on load and
back to integers on save. Kernels: first line ``k k``, then k rows of k
decimals; readers accept arbitrary whitespace.
"""

from __future__ import annotations

import numpy as np


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file (magic {data[:2]!r})")
    magic = data[:2].decode()
    pos = 2
    fields = []

    def next_token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        return data[start:pos]

    while len(fields) < 3:
        fields.append(int(next_token()))
    width, height, maxval = fields
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ValueError(f"{path}: bad PGM header {fields}")
    if magic == "P2":
        raster = np.array(data[pos:].split(), dtype=np.float64)
        if raster.size != width * height:
            raise ValueError(f"{path}: expected {width * height} samples, got {raster.size}")
    else:
        pos += 1  # single whitespace after maxval
        dtype = ">u2" if maxval > 255 else np.uint8
        count = width * height
        raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    img = raster.reshape(height, width) / maxval
    if img.min() < 0 or img.max() > 1:
        raise ValueError(f"{path}: samples exceed the declared maxval")
    return img


def write_pgm(path, img, maxval: int = 255, ascii_format: bool = False):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint32)
    header = f"{'P2' if ascii_format else 'P5'}\n{img.shape[1]} {img.shape[0]}\n{maxval}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode())
        if ascii_format:
            lines = "\n".join(" ".join(str(v) for v in row) for row in q)
            fh.write(lines.encode() + b"\n")
        else:
            fh.write(q.astype(">u2" if maxval > 255 else np.uint8).tobytes())


def read_kernel(path) -> np.ndarray:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: truncated kernel file")
    rows, cols = int(tokens[0]), int(tokens[1])
    if rows != cols or rows < 1 or rows % 2 == 0:
        raise ValueError(f"{path}: kernel must be square with odd size, header says {rows} {cols}")
    vals = np.array(tokens[2:], dtype=np.float64)
    if vals.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, got {vals.size}")
    return vals.reshape(rows, cols)


def write_kernel(path, ker):
    ker = np.asarray(ker, dtype=np.float64)
    if ker.ndim != 2 or ker.shape[0] != ker.shape[1]:
        raise ValueError(f"kernel must be square, got shape {ker.shape}")
    with open(path, "w") as fh:
        fh.write(f"{ker.shape[0]} {ker.shape[1]}\n")
        for row in ker:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
