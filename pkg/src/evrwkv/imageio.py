"""8-bit binary portable pixmaps: PPM (P6, RGB) and PGM (P5, gray).

Arrays are float in [0, 1]; RGB images are (3, H, W) and gray ones (H, W).
Writes go through a temporary file in the target directory followed by a
rename, so readers never observe a partial file.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np


class ImageFormatError(ValueError):
    pass


_WHITESPACE = b" \t\r\n"


def _header_tokens(buf: bytes, count: int) -> tuple[list[tuple[int, bytes]], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns (offset, token) pairs and the offset of the first raster byte.
    """
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i] in _WHITESPACE:
            i += 1
        if i < n and buf[i] == ord("#"):
            while i < n and buf[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise ImageFormatError(f"header truncated at byte {i}")
        start = i
        while i < n and buf[i] not in _WHITESPACE and buf[i] != ord("#"):
            i += 1
        tokens.append((start, buf[start:i]))
    # exactly one whitespace byte separates maxval from the raster
    if i >= n or buf[i] not in _WHITESPACE:
        raise ImageFormatError(f"expected whitespace after header at byte {i}")
    return tokens, i + 1


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 2:
        raise ImageFormatError("file too short for a pixmap header at byte 0")
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"unsupported magic number {magic!r} at byte 0 (expected P6 or P5)")
    channels = 3 if magic == b"P6" else 1
    tokens, data_start = _header_tokens(buf[2:], 3)
    values = []
    for (off, tok), name in zip(tokens, ("width", "height", "maxval")):
        if not tok.isdigit():
            raise ImageFormatError(f"invalid {name} {tok!r} at byte {off + 2}")
        values.append((int(tok), off + 2))
    (width, _), (height, _), (maxval, moff) = values
    if width < 1 or height < 1:
        raise ImageFormatError(f"image extents must be positive, got {width}x{height} at byte {values[0][1]}")
    if maxval > 255:
        raise ImageFormatError(f"maxval {maxval} at byte {moff}: only 8-bit images are supported (16-bit is not)")
    if maxval < 1:
        raise ImageFormatError(f"maxval must be >= 1, got {maxval} at byte {moff}")
    start = data_start + 2
    need = width * height * channels
    raster = buf[start:start + need]
    if len(raster) < need:
        raise ImageFormatError(f"raster truncated: expected {need} bytes from byte {start}, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 3:
        return arr.reshape(height, width, 3).transpose(2, 0, 1).copy()
    return arr.reshape(height, width)


def encode(img: np.ndarray) -> bytes:
    """Clamp to [0, 1], quantise to 8 bits and serialise (P6 for 3xHxW, P5 for HxW)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        magic, h, w = b"P6", img.shape[1], img.shape[2]
        pixels = img.transpose(1, 2, 0)
    elif img.ndim == 2:
        magic, (h, w) = b"P5", img.shape
        pixels = img
    elif img.ndim == 3 and img.shape[0] == 1:
        magic, h, w = b"P5", img.shape[1], img.shape[2]
        pixels = img[0]
    else:
        raise ValueError(f"expected (3, H, W), (1, H, W) or (H, W), got {img.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ValueError("image contains non-finite values")
    q = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode() + q.tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode(buf)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_image(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, encode(img))
