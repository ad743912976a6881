"""Radiance RGBE (.hdr), PFM and PNG reading/writing."""

from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError
from .panorama import LdrImage, RadianceMap

_RES_RE = re.compile(rb"^-Y (\d+) \+X (\d+)$")


def read_radiance_map(data: bytes, exposure_scale: float = 1.0) -> RadianceMap:
    """Decode .hdr or .pfm bytes into linear radiance (times ``exposure_scale``)."""
    if data.startswith(b"#?"):
        arr = decode_rgbe(data)
    elif data[:2] in (b"PF", b"Pf"):
        arr = decode_pfm(data)
    else:
        raise ParseError("unsupported format: expected Radiance '#?' or PFM 'PF'/'Pf' magic", 0)
    if exposure_scale != 1.0:
        arr = arr * np.float32(exposure_scale)
    return RadianceMap(arr, exposure_scale)


def load_radiance_map(path: str | Path, exposure_scale: float = 1.0) -> RadianceMap:
    return read_radiance_map(Path(path).read_bytes(), exposure_scale)


# --------------------------------------------------------------------------
# RGBE


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """value = mantissa / 256 * 2 ** (exponent - 128); exponent 0 means black."""
    rgbe = np.asarray(rgbe)
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return (rgbe[..., :3].astype(np.float64) * scale[..., None]).astype(np.float32)


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    m = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    ok = m > 1e-32
    mant, exp = np.frexp(m[ok])
    scale = mant * 256.0 / m[ok]
    out[ok, :3] = np.clip(np.floor(rgb[ok] * scale[:, None]), 0, 255).astype(np.uint8)
    out[ok, 3] = (exp + 128).astype(np.uint8)
    return out


def _read_header(data: bytes) -> tuple[int, int, int]:
    pos = 0
    fmt = None
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise ParseError("unterminated Radiance header", pos)
        line = data[pos:end].rstrip(b"\r")
        if not line:
            pos = end + 1
            break
        if line.startswith(b"FORMAT="):
            fmt = line[7:].strip()
        pos = end + 1
    if fmt is not None and fmt != b"32-bit_rle_rgbe":
        raise ParseError(f"unsupported pixel format {fmt.decode(errors='replace')!r}", pos)
    end = data.find(b"\n", pos)
    if end < 0:
        raise ParseError("missing resolution line", pos)
    m = _RES_RE.match(data[pos:end].strip())
    if not m:
        raise ParseError(f"unsupported resolution line {data[pos:end]!r}", pos)
    return int(m.group(1)), int(m.group(2)), end + 1


def decode_rgbe(data: bytes) -> np.ndarray:
    height, width, pos = _read_header(data)
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.empty((height, width, 4), dtype=np.uint8)
    for y in range(height):
        if pos + 4 > len(buf):
            raise ParseError(f"truncated scanline {y}", pos)
        head = buf[pos:pos + 4]
        rle = 8 <= width < 32768 and head[0] == 2 and head[1] == 2 and not head[2] & 0x80
        if not rle:
            n = width * 4
            if pos + n > len(buf):
                raise ParseError(f"truncated scanline {y}", pos)
            out[y] = buf[pos:pos + n].reshape(width, 4)
            pos += n
            continue
        if (int(head[2]) << 8 | int(head[3])) != width:
            raise ParseError(f"scanline {y} width mismatch", pos)
        pos += 4
        for c in range(4):
            x = 0
            while x < width:
                if pos >= len(buf):
                    raise ParseError(f"truncated scanline {y}", pos)
                count = int(buf[pos])
                pos += 1
                if count > 128:
                    count -= 128
                    if x + count > width or pos >= len(buf):
                        raise ParseError(f"bad run in scanline {y}", pos)
                    out[y, x:x + count, c] = buf[pos]
                    pos += 1
                else:
                    if count == 0 or x + count > width or pos + count > len(buf):
                        raise ParseError(f"bad literal in scanline {y}", pos)
                    out[y, x:x + count, c] = buf[pos:pos + count]
                    pos += count
                x += count
    return rgbe_to_float(out)


def _rle_channel(row: np.ndarray) -> bytes:
    out = bytearray()
    n = len(row)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and row[i + run] == row[i]:
            run += 1
        if run >= 3:
            out += bytes((128 + run, int(row[i])))
            i += run
            continue
        start = i
        while i < n and i - start < 128:
            if i + 2 < n and row[i] == row[i + 1] == row[i + 2]:
                break
            i += 1
        out.append(i - start)
        out += row[start:i].tobytes()
    return bytes(out)


def encode_rgbe(rgb: np.ndarray, rle: bool = True) -> bytes:
    rgbe = float_to_rgbe(rgb)
    h, w = rgbe.shape[:2]
    out = io.BytesIO()
    out.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
    out.write(f"-Y {h} +X {w}\n".encode())
    use_rle = rle and 8 <= w < 32768
    for y in range(h):
        if not use_rle:
            out.write(rgbe[y].tobytes())
            continue
        out.write(bytes((2, 2, w >> 8, w & 0xFF)))
        for c in range(4):
            out.write(_rle_channel(rgbe[y, :, c]))
    return out.getvalue()


# --------------------------------------------------------------------------
# PFM


def _pfm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data) and data[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("truncated PFM header", pos)
    return data[start:pos], pos


def decode_pfm(data: bytes) -> np.ndarray:
    magic, pos = _pfm_token(data, 0)
    if magic not in (b"PF", b"Pf"):
        raise ParseError(f"bad PFM magic {magic!r}", 0)
    channels = 3 if magic == b"PF" else 1
    try:
        w_tok, pos = _pfm_token(data, pos)
        h_tok, pos = _pfm_token(data, pos)
        s_tok, pos = _pfm_token(data, pos)
        width, height, scale = int(w_tok), int(h_tok), float(s_tok)
    except ValueError as exc:
        raise ParseError(f"bad PFM header: {exc}", pos) from exc
    pos += 1  # single whitespace byte before the raster
    dtype = "<f4" if scale < 0 else ">f4"
    n = width * height * channels
    if len(data) < pos + 4 * n:
        raise ParseError(f"truncated PFM raster: need {4 * n} bytes", pos)
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.float32)
    arr = arr.reshape(height, width, channels)[::-1]
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return np.ascontiguousarray(arr)


def encode_pfm(rgb: np.ndarray, little_endian: bool = True) -> bytes:
    rgb = np.asarray(rgb, dtype=np.float32)
    h, w = rgb.shape[:2]
    grey = rgb.ndim == 2
    head = f"{'Pf' if grey else 'PF'}\n{w} {h}\n{-1.0 if little_endian else 1.0}\n".encode()
    raster = np.ascontiguousarray(rgb[::-1]).astype("<f4" if little_endian else ">f4")
    return head + raster.tobytes()


def save_pfm(path: str | Path, envmap: RadianceMap) -> None:
    Path(path).write_bytes(encode_pfm(envmap.data))


def save_hdr(path: str | Path, envmap: RadianceMap) -> None:
    Path(path).write_bytes(encode_rgbe(envmap.data))


def save_radiance_map(path: str | Path, envmap: RadianceMap) -> None:
    if str(path).lower().endswith(".hdr"):
        save_hdr(path, envmap)
    else:
        save_pfm(path, envmap)


# --------------------------------------------------------------------------
# PNG


def save_png(path: str | Path, image: LdrImage | np.ndarray) -> None:
    arr = image.to_uint8() if isinstance(image, LdrImage) else np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG", optimize=False)


def load_png(path: str | Path) -> np.ndarray:
    """8-bit RGB array (H, W, 3)."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ParseError(f"{path}: cannot decode image: {exc}") from exc
