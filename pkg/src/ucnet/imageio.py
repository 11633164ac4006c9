"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ImageFormatError


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that ends the last one.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in b" \t\r\n":
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise ImageFormatError("truncated PPM header")
        start = pos
        while pos < n and data[pos] not in b" \t\r\n#":
            pos += 1
        tokens.append(data[start:pos])
    if pos >= n or data[pos] not in b" \t\r\n":
        raise ImageFormatError("PPM header must end with a single whitespace byte")
    return tokens, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        if data[:2] == b"P3":
            raise ImageFormatError("unsupported format: ASCII PPM (P3); only binary P6 is read")
        raise ImageFormatError("bad magic: not a binary PPM (P6) file")
    (magic, w, h, maxval), offset = _tokens(data, 4)
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("non-numeric PPM header field") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 255 is read")
    if width < 1 or height < 1:
        raise ImageFormatError("PPM dimensions must be positive")
    size = width * height * 3
    if len(data) - offset < size:
        raise ImageFormatError(f"truncated PPM payload: need {size} bytes, have {len(data) - offset}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=offset).reshape(height, width, 3).copy()


def encode_ppm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255 or np.any(img != np.round(img)):
            raise ImageFormatError("PPM pixels must be 8-bit integers")
        img = img.astype(np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_ppm(path) -> np.ndarray:
    """H x W x 3 uint8 array from a binary PPM file."""
    return decode_ppm(Path(path).read_bytes())


def write_ppm(image, path) -> None:
    Path(path).write_bytes(encode_ppm(image))
