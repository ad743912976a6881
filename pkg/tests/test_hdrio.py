import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shlight.errors import ParseError
from shlight.hdrio import (
    decode_pfm,
    decode_rgbe,
    encode_pfm,
    encode_rgbe,
    float_to_rgbe,
    load_png,
    load_radiance_map,
    read_radiance_map,
    rgbe_to_float,
    save_png,
    save_radiance_map,
)
from shlight.panorama import LdrImage, RadianceMap

HEADER = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n"


def flat_hdr(pixels: list[tuple[int, int, int, int]], width: int) -> bytes:
    h = len(pixels) // width
    return HEADER + f"-Y {h} +X {width}\n".encode() + bytes(b for p in pixels for b in p)


class TestRgbe:
    def test_one(self):
        out = decode_rgbe(flat_hdr([(128, 128, 128, 129)], 1))
        assert out[0, 0].tolist() == [1.0, 1.0, 1.0]

    def test_zero_exponent(self):
        assert rgbe_to_float(np.array([0, 0, 0, 0], np.uint8)).tolist() == [0.0, 0.0, 0.0]
        assert rgbe_to_float(np.array([200, 10, 3, 0], np.uint8)).tolist() == [0.0, 0.0, 0.0]

    def test_hand_decode(self):
        # 64 / 256 * 2 ** (131 - 128) = 2
        assert rgbe_to_float(np.array([64, 32, 0, 131], np.uint8)).tolist() == [2.0, 1.0, 0.0]

    def test_encode_round_trip_precision(self, rng):
        rgb = rng.uniform(0, 50, (6, 20, 3)).astype(np.float32)
        back = decode_rgbe(encode_rgbe(rgb))
        # 8-bit mantissa of the largest channel
        assert np.all(np.abs(back - rgb) <= rgb.max(axis=-1, keepdims=True) / 128)

    @given(arrays(np.uint8, (3, 17, 4)))
    def test_rle_round_trip_exact(self, rgbe):
        rgbe[..., 3] = np.maximum(rgbe[..., 3], 1)
        rgb = rgbe_to_float(rgbe)
        canon = float_to_rgbe(rgb)  # the encoder's normalized form
        for rle in (True, False):
            assert np.array_equal(float_to_rgbe(decode_rgbe(encode_rgbe(rgb, rle))), canon)

    def test_runs_compress(self):
        rgb = np.ones((4, 64, 3), np.float32)
        assert len(encode_rgbe(rgb, rle=True)) < len(encode_rgbe(rgb, rle=False)) / 4

    def test_truncated_scanline_offset(self):
        data = flat_hdr([(128, 128, 128, 129)] * 4, 2)
        with pytest.raises(ParseError) as exc:
            decode_rgbe(data[:-3])
        head = len(HEADER) + len(b"-Y 2 +X 2\n")
        assert exc.value.offset == head + 8

    def test_unterminated_header(self):
        with pytest.raises(ParseError) as exc:
            decode_rgbe(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe")
        assert exc.value.offset is not None

    def test_bad_format_and_resolution(self):
        with pytest.raises(ParseError, match="pixel format"):
            decode_rgbe(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\x00\x00\x00\x00")
        with pytest.raises(ParseError, match="resolution"):
            decode_rgbe(HEADER + b"+Y 1 +X 1\n\x00\x00\x00\x00")

    def test_unknown_magic(self):
        with pytest.raises(ParseError) as exc:
            read_radiance_map(b"P6\n1 1\n255\n\x00\x00\x00")
        assert exc.value.offset == 0


class TestPfm:
    def test_grey_little_endian(self):
        data = b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 2.5)
        assert decode_pfm(data)[0, 0].tolist() == [2.5, 2.5, 2.5]

    def test_big_endian(self):
        data = b"PF\n2 1\n1.0\n" + struct.pack(">6f", 1, 2, 3, 4, 5, 6)
        assert decode_pfm(data).tolist() == [[[1, 2, 3], [4, 5, 6]]]

    def test_rows_bottom_to_top(self):
        img = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
        for le in (True, False):
            assert np.array_equal(decode_pfm(encode_pfm(img, le)), img)
        raw = encode_pfm(img)
        assert struct.unpack("<f", raw[raw.index(b"-1.0\n") + 5:][:4])[0] == img[1, 0, 0]

    def test_truncated(self):
        with pytest.raises(ParseError, match="truncated"):
            decode_pfm(b"PF\n2 2\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(ParseError):
            decode_pfm(b"PF\n2")


class TestFiles:
    def test_exposure_scale(self, tmp_path):
        m = RadianceMap(np.full((2, 4, 3), 1.5, np.float32))
        save_radiance_map(tmp_path / "m.pfm", m)
        back = load_radiance_map(tmp_path / "m.pfm", exposure_scale=2.0)
        assert back.exposure_scale == 2.0 and np.allclose(back.data, 3.0)

    def test_hdr_suffix(self, tmp_path):
        m = RadianceMap(np.full((2, 4, 3), 1.0, np.float32))
        save_radiance_map(tmp_path / "m.hdr", m)
        assert (tmp_path / "m.hdr").read_bytes().startswith(b"#?RADIANCE")
        assert np.array_equal(load_radiance_map(tmp_path / "m.hdr").data, m.data)

    def test_png_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        save_png(tmp_path / "a.png", arr)
        assert np.array_equal(load_png(tmp_path / "a.png"), arr)
        save_png(tmp_path / "b.png", LdrImage(np.full((2, 2, 3), 0.5)))
        assert load_png(tmp_path / "b.png")[0, 0].tolist() == [128, 128, 128]

    def test_png_garbage(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(ParseError):
            load_png(tmp_path / "x.png")
