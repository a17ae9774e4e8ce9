"""PNG codec tests: round trips, metadata, scanline filters, error paths."""

import struct
import zlib

import numpy as np
import pytest

from orthorep.pngio import SIGNATURE, PngError, read_png, write_png


def chunk(tag, payload):
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def craft_png(path, pixels, filters):
    """Write an RGB8 PNG by hand with a chosen filter byte per scanline.

    Filtering itself is done here with an independent straightforward
    implementation of the PNG spec, so read_png's unfiltering is checked
    against something other than write_png.
    """
    h, w, _ = pixels.shape
    bpp = 3
    stride = w * bpp
    rows = pixels.reshape(h, stride).astype(np.int32)
    out_rows = []
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(h):
        cur = rows[y]
        f = filters[y % len(filters)]
        if f == 0:
            enc = cur
        elif f == 1:
            left = np.concatenate([np.zeros(bpp, np.int32), cur[:-bpp]])
            enc = (cur - left) % 256
        elif f == 2:
            enc = (cur - prev) % 256
        elif f == 3:
            left = np.concatenate([np.zeros(bpp, np.int32), cur[:-bpp]])
            enc = (cur - ((left + prev) >> 1)) % 256
        elif f == 4:
            enc = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                enc[x] = (cur[x] - pred) % 256
        else:
            raise AssertionError(f)
        out_rows.append(bytes([f]) + bytes(enc.astype(np.uint8)))
        prev = cur
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    body = SIGNATURE + chunk(b"IHDR", ihdr)
    body += chunk(b"IDAT", zlib.compress(b"".join(out_rows)))
    body += chunk(b"IEND", b"")
    path.write_bytes(body)


def test_round_trip_8bit(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(13, 9, 3), dtype=np.uint8)
    p = tmp_path / "a.png"
    write_png(p, arr)
    back, texts = read_png(p)
    np.testing.assert_array_equal(back, arr)
    assert back.dtype == np.uint8
    assert texts == {}


def test_round_trip_16bit(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.integers(0, 65536, size=(6, 11, 3), dtype=np.uint16)
    p = tmp_path / "b.png"
    write_png(p, arr)
    back, _ = read_png(p)
    np.testing.assert_array_equal(back, arr)
    assert back.dtype == np.uint16


def test_text_chunks_round_trip(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    meta = {"orthorep:layout": '{"kind": "normal"}', "note": "hello world"}
    p = tmp_path / "t.png"
    write_png(p, arr, texts=meta)
    _, texts = read_png(p)
    assert texts == meta


def test_16bit_samples_are_big_endian(tmp_path):
    arr = np.full((1, 1, 3), 0x0102, dtype=np.uint16)
    p = tmp_path / "be.png"
    write_png(p, arr)
    data = p.read_bytes()
    # Find the IDAT payload and decompress: filter byte then 6 sample bytes.
    pos = 8
    payload = None
    while pos < len(data):
        length, tag = struct.unpack_from(">I4s", data, pos)
        if tag == b"IDAT":
            payload = data[pos + 8:pos + 8 + length]
            break
        pos += 12 + length
    raw = zlib.decompress(payload)
    assert raw == b"\x00" + b"\x01\x02" * 3


def test_ihdr_fields(tmp_path):
    arr = np.zeros((7, 5, 3), dtype=np.uint8)
    p = tmp_path / "h.png"
    write_png(p, arr)
    data = p.read_bytes()
    assert data[:8] == SIGNATURE
    length, tag = struct.unpack_from(">I4s", data, 8)
    assert tag == b"IHDR" and length == 13
    w, h, depth, color, comp, filt, interlace = struct.unpack_from(
        ">IIBBBBB", data, 16)
    assert (w, h, depth, color, comp, filt, interlace) == (5, 7, 8, 2, 0, 0, 0)


@pytest.mark.parametrize("filters", [[1], [2], [3], [4], [0, 1, 2, 3, 4]])
def test_reads_all_filter_types(tmp_path, filters):
    rng = np.random.default_rng(sum(filters))
    arr = rng.integers(0, 256, size=(10, 6, 3), dtype=np.uint8)
    p = tmp_path / "f.png"
    craft_png(p, arr, filters)
    back, _ = read_png(p)
    np.testing.assert_array_equal(back, arr)


def test_rejects_bad_signature(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"JFIF" + b"\0" * 40)
    with pytest.raises(PngError, match="not a PNG"):
        read_png(p)


def test_rejects_unsupported_color_type(tmp_path):
    ihdr = struct.pack(">IIBBBBB", 2, 2, 8, 6, 0, 0, 0)  # RGBA
    p = tmp_path / "rgba.png"
    p.write_bytes(SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IEND", b""))
    with pytest.raises(PngError, match="color type 6"):
        read_png(p)


def test_rejects_missing_ihdr(tmp_path):
    p = tmp_path / "no.png"
    p.write_bytes(SIGNATURE + chunk(b"IEND", b""))
    with pytest.raises(PngError, match="IHDR"):
        read_png(p)


def test_rejects_size_mismatch(tmp_path):
    ihdr = struct.pack(">IIBBBBB", 4, 4, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00" * 5)  # far too short for 4x4 RGB
    p = tmp_path / "short.png"
    p.write_bytes(SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat)
                  + chunk(b"IEND", b""))
    with pytest.raises(PngError, match="size mismatch"):
        read_png(p)


def test_rejects_unknown_filter_type(tmp_path):
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x07\x00\x00\x00")
    p = tmp_path / "filt.png"
    p.write_bytes(SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat)
                  + chunk(b"IEND", b""))
    with pytest.raises(PngError, match="filter type 7"):
        read_png(p)


def test_write_rejects_bad_shape_and_dtype(tmp_path):
    with pytest.raises(PngError, match="shape"):
        write_png(tmp_path / "x.png", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(PngError, match="uint8 or uint16"):
        write_png(tmp_path / "y.png", np.zeros((4, 4, 3), dtype=np.float64))


def test_write_rejects_long_text_keyword(tmp_path):
    with pytest.raises(PngError, match="keyword"):
        write_png(tmp_path / "k.png", np.zeros((1, 1, 3), dtype=np.uint8),
                  texts={"k" * 80: "v"})


def test_idat_split_across_chunks(tmp_path):
    # Readers must concatenate multiple IDAT chunks before inflating.
    rng = np.random.default_rng(5)
    arr = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    rows = b"".join(b"\x00" + arr[y].tobytes() for y in range(4))
    comp = zlib.compress(rows)
    ihdr = struct.pack(">IIBBBBB", 4, 4, 8, 2, 0, 0, 0)
    p = tmp_path / "split.png"
    p.write_bytes(SIGNATURE + chunk(b"IHDR", ihdr)
                  + chunk(b"IDAT", comp[:7]) + chunk(b"IDAT", comp[7:])
                  + chunk(b"IEND", b""))
    back, _ = read_png(p)
    np.testing.assert_array_equal(back, arr)


def test_compress_level_changes_bytes_not_pixels(tmp_path):
    arr = np.full((32, 32, 3), 7, dtype=np.uint8)
    p0 = tmp_path / "c0.png"
    p9 = tmp_path / "c9.png"
    write_png(p0, arr, compress_level=0)
    write_png(p9, arr, compress_level=9)
    assert p0.stat().st_size > p9.stat().st_size
    a0, _ = read_png(p0)
    a9, _ = read_png(p9)
    np.testing.assert_array_equal(a0, a9)
