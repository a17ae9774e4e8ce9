"""Minimal PNG reader/writer: truecolor RGB, 8 or 16 bit, tEXt metadata.

Only the subset this package emits is supported on read: color type 2,
no interlacing. All five scanline filters are handled so files recompressed
by other tools still load.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def write_png(path, array: np.ndarray, texts: dict[str, str] | None = None,
              compress_level: int = 6) -> None:
    """Write an (H, W, 3) uint8 or uint16 array as a PNG file.

    texts are emitted as tEXt chunks (latin-1 keyword and value).
    """
    arr = np.asarray(array)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PngError(f"expected (H, W, 3) array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        depth = 8
        raw = np.ascontiguousarray(arr)
    elif arr.dtype == np.uint16:
        depth = 16
        raw = np.ascontiguousarray(arr.astype(">u2"))
    else:
        raise PngError(f"expected uint8 or uint16 samples, got {arr.dtype}")
    h, w, _ = arr.shape
    ihdr = struct.pack(">IIBBBBB", w, h, depth, 2, 0, 0, 0)
    rows = raw.reshape(h, -1).view(np.uint8).reshape(h, -1)
    # Filter type 0 (None) per scanline: deterministic and fast.
    filtered = np.concatenate([np.zeros((h, 1), dtype=np.uint8), rows], axis=1)
    idat = zlib.compress(filtered.tobytes(), compress_level)
    out = [SIGNATURE, _chunk(b"IHDR", ihdr)]
    for key, value in (texts or {}).items():
        kb = key.encode("latin-1")
        if not 1 <= len(kb) <= 79:
            raise PngError(f"tEXt keyword length out of range: {key!r}")
        out.append(_chunk(b"tEXt", kb + b"\x00" + value.encode("latin-1")))
    out.append(_chunk(b"IDAT", idat))
    out.append(_chunk(b"IEND", b""))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def _unfilter(filtered: np.ndarray, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), dtype=np.uint8)
    for y in range(h):
        ftype = filtered[y, 0]
        line = filtered[y, 1:].astype(np.int32)
        prev = out[y - 1].astype(np.int32) if y > 0 else np.zeros(stride, np.int32)
        if ftype == 0:
            rec = line
        elif ftype == 1:  # Sub
            rec = line.copy()
            for x in range(bpp, stride):
                rec[x] = (rec[x] + rec[x - bpp]) & 0xFF
        elif ftype == 2:  # Up
            rec = (line + prev) & 0xFF
        elif ftype == 3:  # Average
            rec = line.copy()
            for x in range(stride):
                left = rec[x - bpp] if x >= bpp else 0
                rec[x] = (rec[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            rec = line.copy()
            for x in range(stride):
                a = rec[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                if pa <= pb and pa <= pc:
                    pred = a
                elif pb <= pc:
                    pred = b
                else:
                    pred = c
                rec[x] = (rec[x] + pred) & 0xFF
        else:
            raise PngError(f"unsupported filter type {ftype}")
        out[y] = rec.astype(np.uint8)
    return out


def read_png(path):
    """Read a PNG written by this package.

    Returns:
        (array, texts): (H, W, 3) uint8 or uint16 array plus the tEXt
        chunks as a dict.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != SIGNATURE:
        raise PngError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = bytearray()
    texts: dict[str, str] = {}
    while pos < len(data):
        if pos + 8 > len(data):
            raise PngError(f"{path}: truncated chunk header")
        length, tag = struct.unpack_from(">I4s", data, pos)
        payload = data[pos + 8:pos + 8 + length]
        pos += 12 + length  # header + payload + CRC
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"tEXt":
            key, _, value = payload.partition(b"\x00")
            texts[key.decode("latin-1")] = value.decode("latin-1")
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise PngError(f"{path}: missing IHDR")
    w, h, depth, color, _comp, _filt, interlace = ihdr
    if color != 2 or depth not in (8, 16) or interlace != 0:
        raise PngError(
            f"{path}: unsupported PNG (color type {color}, depth {depth}, "
            f"interlace {interlace}); need non-interlaced RGB 8/16-bit"
        )
    bpp = 3 * (depth // 8)
    stride = w * bpp
    raw = np.frombuffer(zlib.decompress(bytes(idat)), dtype=np.uint8)
    if raw.size != h * (stride + 1):
        raise PngError(f"{path}: decompressed size mismatch")
    rows = _unfilter(raw.reshape(h, stride + 1), h, stride, bpp)
    if depth == 8:
        arr = rows.reshape(h, w, 3)
    else:
        arr = rows.reshape(h, -1).view(">u2").reshape(h, w, 3).astype(np.uint16)
    return arr, texts
