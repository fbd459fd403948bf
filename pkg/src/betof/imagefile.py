"""Readers/writers for the two grid file formats used by the toolkit.

PFM (Portable FloatMap): single-channel "Pf" variant, little-endian float32,
rows stored bottom-up per the de-facto convention (negative scale field).
PGM16: binary "P5" with maxval 65535, big-endian uint16 per the netpbm spec.

Grids are exchanged as 2-D numpy arrays, row-major, origin top-left.
"""

import re

import numpy as np


class ParseError(ValueError):
    """Malformed image file; message names the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _read_token(buf, pos):
    # skip whitespace and netpbm comments, return (token, new_pos)
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", start)
    return buf[start:pos], pos


def write_pfm(path, grid):
    """Write a 2-D float grid as a single-channel little-endian PFM."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise ValueError("PFM writer expects a 2-D grid")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        # bottom-up row order, as signalled by the negative scale
        f.write(np.ascontiguousarray(grid[::-1, :]).tobytes())


def read_pfm(path):
    """Read a single-channel PFM into a 2-D float64 grid (top-left origin)."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"Pf":
        raise ParseError(f"bad PFM magic {magic!r}", 0)
    wtok, pos = _read_token(buf, pos)
    htok, pos = _read_token(buf, pos)
    stok, pos = _read_token(buf, pos)
    try:
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise ParseError("non-numeric PFM header field", pos) from None
    if w <= 0 or h <= 0 or scale == 0:
        raise ParseError("bad PFM dimensions or scale", pos)
    pos += 1  # single whitespace byte after the scale line
    need = w * h * 4
    if len(buf) - pos < need:
        raise ParseError(
            f"truncated PFM payload, need {need} bytes, have {len(buf) - pos}",
            pos)
    dt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf[pos:pos + need], dtype=dt).reshape(h, w)
    return data[::-1, :].astype(np.float64)


def write_pgm16(path, grid):
    """Write a uint16 grid as binary PGM with maxval 65535."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("PGM writer expects a 2-D grid")
    if grid.min() < 0 or grid.max() > 65535:
        raise ValueError("PGM16 values must lie in [0, 65535]")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(grid.astype(">u2").tobytes())


def read_pgm16(path):
    """Read a binary 16-bit PGM into a uint-valued 2-D array."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise ParseError(f"bad PGM magic {magic!r}", 0)
    wtok, pos = _read_token(buf, pos)
    htok, pos = _read_token(buf, pos)
    mtok, pos = _read_token(buf, pos)
    if not re.fullmatch(rb"\d+", wtok + htok + mtok):
        raise ParseError("non-numeric PGM header field", pos)
    w, h, maxval = int(wtok), int(htok), int(mtok)
    if maxval != 65535:
        raise ParseError(f"expected 16-bit PGM (maxval 65535), got {maxval}", pos)
    pos += 1
    need = w * h * 2
    if len(buf) - pos < need:
        raise ParseError(
            f"truncated PGM payload, need {need} bytes, have {len(buf) - pos}",
            pos)
    return np.frombuffer(buf[pos:pos + need], dtype=">u2").reshape(h, w).astype(np.int64)
