"""PGM images and blur-kernel text files."""

from __future__ import annotations

import os
from typing import Union

import numpy as np

from .fields import check_finite
from .operators import ConvolutionKernel

__all__ = ["PGMError", "read_kernel", "read_pgm", "write_kernel", "write_pgm"]

PathLike = Union[str, os.PathLike]
MAXVALS = (255, 65535)


class PGMError(ValueError):
    """Malformed or truncated PGM data; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _tokens(data: bytes, pos: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise PGMError("unexpected end of header", pos)
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise PGMError(f"expected a decimal number, got {tok[:16]!r}", start)
        out.append((int(tok), start))
    return out, pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode P2 or P5 bytes into a float field in ``[0, 1]``."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic number {magic!r}", 0)
    ((w, _), (hgt, _), (maxval, moff)), pos = _tokens(data, 2, 3)
    if w < 1 or hgt < 1:
        raise PGMError(f"invalid dimensions {w}x{hgt}", 2)
    if maxval not in MAXVALS:
        raise PGMError(f"maxval must be 255 or 65535, got {maxval}", moff)
    n = w * hgt
    if magic == b"P5":
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise PGMError("missing whitespace after header", pos)
        pos += 1
        width = 1 if maxval == 255 else 2
        need = n * width
        if len(data) - pos < need:
            raise PGMError(f"truncated payload: need {need} bytes, have {len(data) - pos}",
                           len(data))
        dtype = np.uint8 if width == 1 else np.dtype(">u2")
        vals = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(float)
    else:
        vals = np.empty(n)
        for i in range(n):
            try:
                ((v, off),), pos = _tokens(data, pos, 1)
            except PGMError as e:
                raise PGMError(f"truncated payload: read {i} of {n} samples", e.offset) from None
            if v > maxval:
                raise PGMError(f"sample {v} exceeds maxval {maxval}", off)
            vals[i] = v
    if magic == b"P5" and np.any(vals > maxval):
        raise PGMError(f"sample exceeds maxval {maxval}", pos)
    return vals.reshape(hgt, w) / maxval


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(u: np.ndarray, maxval: int = 255, binary: bool = True) -> bytes:
    u = check_finite(u, "image")
    if u.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {u.shape}")
    if maxval not in MAXVALS:
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    x = u * maxval
    # round half away from zero, then clamp
    q = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), 0, maxval).astype(np.int64)
    hgt, w = q.shape
    if binary:
        head = f"P5\n{w} {hgt}\n{maxval}\n".encode()
        dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
        return head + q.astype(dtype).tobytes()
    head = f"P2\n{w} {hgt}\n{maxval}\n"
    rows = "\n".join(" ".join(str(v) for v in row) for row in q)
    return (head + rows + "\n").encode()


def write_pgm(u: np.ndarray, path: PathLike, maxval: int = 255, binary: bool = True) -> None:
    data = encode_pgm(u, maxval, binary)
    with open(path, "wb") as fh:
        fh.write(data)


def read_kernel(path: PathLike) -> ConvolutionKernel:
    """Read ``width height h`` followed by ``height`` rows of ``width`` weights."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty kernel file")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"{path}: first line must be 'width height h'")
    w, hgt, h = int(head[0]), int(head[1]), float(head[2])
    rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    if len(rows) != hgt or any(len(r) != w for r in rows):
        raise ValueError(f"{path}: expected {hgt} rows of {w} weights")
    return ConvolutionKernel(np.array(rows), h)


def write_kernel(k: ConvolutionKernel, path: PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{k.width} {k.height} {k.spacing!r}\n")
        for row in k.weights:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
