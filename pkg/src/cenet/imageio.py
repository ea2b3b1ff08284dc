"""Minimal lossless image codecs: 8-bit RGB PNG and binary PPM (P6).

Decoded images live in memory as (H, W, 3) float32 arrays in [0, 1]
(value = byte / 255). Export clamps to [0, 1] and rounds half-up back to
bytes, so decode(encode(img)) is bit-exact. PNG support covers non-
interlaced 8-bit RGB and RGBA (alpha is dropped with a warning).
"""

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageParseError(ValueError):
    """Malformed or truncated image data; the message carries a byte offset."""


class UnsupportedImageError(ValueError):
    """Structurally valid image in a format variant this codec does not handle."""


@dataclass
class Image:
    """RGB raster with float pixels in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"image pixels must be (H, W, 3), got {self.pixels.shape}")
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_u8(cls, arr: np.ndarray) -> "Image":
        return cls(arr.astype(np.float32) / 255.0)

    def to_u8(self) -> np.ndarray:
        """Clamp to [0, 1] and round half-up to bytes."""
        clamped = np.clip(self.pixels, 0.0, 1.0)
        return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _defilter(raw: bytes, width: int, height: int, bpp: int) -> np.ndarray:
    stride = width * bpp
    expected = (1 + stride) * height
    if len(raw) != expected:
        raise ImageParseError(
            f"decompressed pixel stream is {len(raw)} bytes, expected {expected}")
    out = np.zeros((height, stride), dtype=np.int32)
    raw_arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, 1 + stride)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        ftype = int(raw_arr[y, 0])
        line = raw_arr[y, 1:].astype(np.int32)
        if ftype == 0:
            recon = line
        elif ftype == 1:  # Sub: prefix sum per channel lane, mod 256
            lanes = line.reshape(width, bpp)
            recon = (np.cumsum(lanes, axis=0) % 256).reshape(stride)
        elif ftype == 2:  # Up
            recon = (line + prev) % 256
        elif ftype == 3:  # Average
            recon = np.zeros(stride, dtype=np.int32)
            lanes = line.reshape(width, bpp)
            rl = recon.reshape(width, bpp)
            pl = prev.reshape(width, bpp)
            left = np.zeros(bpp, dtype=np.int32)
            for x in range(width):
                rl[x] = (lanes[x] + (left + pl[x]) // 2) % 256
                left = rl[x]
        elif ftype == 4:  # Paeth
            recon = np.zeros(stride, dtype=np.int32)
            lanes = line.reshape(width, bpp)
            rl = recon.reshape(width, bpp)
            pl = prev.reshape(width, bpp)
            left = np.zeros(bpp, dtype=np.int32)
            upleft = np.zeros(bpp, dtype=np.int32)
            for x in range(width):
                pred = np.array([_paeth(int(left[i]), int(pl[x, i]), int(upleft[i]))
                                 for i in range(bpp)], dtype=np.int32)
                rl[x] = (lanes[x] + pred) % 256
                left = rl[x]
                upleft = pl[x]
        else:
            raise ImageParseError(f"unknown scanline filter type {ftype} on row {y}")
        out[y] = recon
        prev = recon
    return out.astype(np.uint8).reshape(height, width, bpp)


def decode_png(data: bytes) -> Image:
    if len(data) < 8 or data[:8] != PNG_SIGNATURE:
        raise ImageParseError("missing PNG signature at byte offset 0")
    pos = 8
    header = None
    idat = bytearray()
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise ImageParseError(f"truncated chunk header at byte offset {pos}")
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        ctype = data[pos + 4:pos + 8]
        body_at = pos + 8
        if body_at + length + 4 > len(data):
            raise ImageParseError(f"truncated {ctype!r} chunk at byte offset {pos}")
        body = data[body_at:body_at + length]
        (crc,) = struct.unpack(">I", data[body_at + length:body_at + length + 4])
        if crc != zlib.crc32(ctype + body):
            raise ImageParseError(f"CRC mismatch in {ctype.decode('latin1')} chunk "
                                  f"at byte offset {pos}")
        if ctype == b"IHDR":
            if length != 13:
                raise ImageParseError(f"IHDR length {length} at byte offset {pos}")
            width, height, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", body)
            if depth != 8 or color not in (2, 6):
                raise UnsupportedImageError(
                    f"only 8-bit RGB/RGBA PNG is supported (depth {depth}, color type {color})")
            if interlace != 0:
                raise UnsupportedImageError("interlaced PNG is not supported")
            if comp != 0 or filt != 0:
                raise ImageParseError(
                    f"invalid compression/filter method at byte offset {pos}")
            if width == 0 or height == 0:
                raise ImageParseError(f"zero image extent at byte offset {pos}")
            header = (width, height, color)
        elif ctype == b"IDAT":
            if header is None:
                raise ImageParseError(f"IDAT before IHDR at byte offset {pos}")
            idat.extend(body)
        elif ctype == b"IEND":
            seen_end = True
            pos = body_at + length + 4
            break
        pos = body_at + length + 4
    if header is None:
        raise ImageParseError("no IHDR chunk found")
    if not seen_end:
        raise ImageParseError(f"missing IEND chunk at byte offset {pos}")
    if not idat:
        raise ImageParseError("no IDAT chunks found")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageParseError(f"corrupt compressed pixel data: {exc}") from exc
    width, height, color = header
    bpp = 3 if color == 2 else 4
    arr = _defilter(raw, width, height, bpp)
    if bpp == 4:
        log.warning("dropping alpha channel from RGBA PNG")
        arr = arr[:, :, :3]
    return Image.from_u8(arr)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return (struct.pack(">I", len(body)) + ctype + body
            + struct.pack(">I", zlib.crc32(ctype + body)))


def encode_png(image: Image) -> bytes:
    arr = image.to_u8()
    h, w = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    scanlines = bytearray()
    for y in range(h):
        scanlines.append(0)
        scanlines.extend(arr[y].tobytes())
    return (PNG_SIGNATURE
            + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(bytes(scanlines), 6))
            + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# PPM (P6)
# ---------------------------------------------------------------------------

def _ppm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= len(data):
        raise ImageParseError(f"truncated PPM header at byte offset {pos}")
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def decode_ppm(data: bytes) -> Image:
    magic, pos = _ppm_token(data, 0)
    if magic != b"P6":
        if magic in (b"P1", b"P2", b"P3", b"P4", b"P5"):
            raise UnsupportedImageError(f"only binary PPM (P6) is supported, got {magic.decode('latin1')}")
        raise ImageParseError("missing P6 magic at byte offset 0")
    fields = []
    for field_name in ("width", "height", "maxval"):
        token, pos = _ppm_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise ImageParseError(
                f"invalid PPM {field_name} at byte offset {pos - len(token)}") from None
        fields.append(value)
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageParseError(f"non-positive PPM extents at byte offset {pos}")
    if maxval != 255:
        raise UnsupportedImageError(f"only maxval 255 PPM is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = 3 * width * height
    if len(data) - pos < need:
        raise ImageParseError(
            f"truncated PPM pixel data at byte offset {len(data)} "
            f"(need {need} bytes from offset {pos})")
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return Image.from_u8(arr.reshape(height, width, 3))


def encode_ppm(image: Image) -> bytes:
    arr = image.to_u8()
    h, w = arr.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def decode_image(data: bytes) -> Image:
    if data[:8] == PNG_SIGNATURE:
        return decode_png(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    raise UnsupportedImageError("unrecognized image format (expected PNG or P6 PPM)")


def encode_image(image: Image, fmt: str) -> bytes:
    fmt = fmt.lower().lstrip(".")
    if fmt == "png":
        return encode_png(image)
    if fmt == "ppm":
        return encode_ppm(image)
    raise UnsupportedImageError(f"unknown image format {fmt!r}")


def load_image(path) -> Image:
    return decode_image(Path(path).read_bytes())


def save_image(image: Image, path):
    path = Path(path)
    path.write_bytes(encode_image(image, path.suffix))
