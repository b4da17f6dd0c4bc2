"""Grayscale image files.

Binary PGM (``P5``, maxval 255) is the canonical format: it is written with
the exact header ``P5\\n<w> <h>\\n255\\n`` followed by raw row-major bytes.
8-bit grayscale PNG can also be read when Pillow is installed.
"""
from __future__ import annotations

import os

import numpy as np

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class FormatError(ValueError):
    """An image file violates the expected format; ``field`` names the culprit."""

    def __init__(self, path, field: str, detail: str):
        self.path = os.fspath(path)
        self.field = field
        super().__init__(f"{self.path}: bad {field}: {detail}")


def quantize(img) -> np.ndarray:
    """Map [0, 1] floats to bytes with ``floor(v * 255 + 0.5)`` after clamping."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def _header_tokens(data: bytes, path, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that ends the last token.
    """
    tokens, pos, n = [], 2, len(data)
    names = ("width", "height", "maxval")
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(path, names[len(tokens)], "missing (file truncated)")
        tok = data[start:pos]
        if not tok.isdigit():
            raise FormatError(path, names[len(tokens)], f"not a decimal integer: {tok!r}")
        tokens.append(int(tok))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError(path, "header", "maxval must be followed by one whitespace byte")
    return tokens, pos + 1


def decode_pgm(data: bytes, path="<bytes>") -> np.ndarray:
    if data[:2] != b"P5":
        raise FormatError(path, "magic", f"expected b'P5', got {data[:2]!r}")
    (width, height, maxval), offset = _header_tokens(data, path, 3)
    if width < 1 or height < 1:
        raise FormatError(path, "width" if width < 1 else "height", "must be positive")
    if maxval != 255:
        raise FormatError(path, "maxval", f"only 255 (8-bit) is supported, got {maxval}")
    need = width * height
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise FormatError(path, "payload", f"expected {need} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width) / 255.0


def encode_pgm(img) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {img.shape}")
    height, width = img.shape
    return b"P5\n%d %d\n255\n" % (width, height) + quantize(img).tobytes()


def _load_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise FormatError(path, "magic", "PNG input needs Pillow installed") from exc
    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(path, "bit depth", f"expected 8-bit grayscale (mode L), got mode {im.mode}")
        pixels = np.asarray(im, dtype=np.uint8)
    return pixels / 255.0


def load_image(path) -> np.ndarray:
    """Read a P5 PGM or 8-bit grayscale PNG as floats ``v / 255``.

    Raises :class:`FormatError` for unsupported or damaged files and
    ``OSError`` when the file cannot be read.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(PNG_MAGIC):
        return _load_png(path)
    return decode_pgm(data, path)


def save_image(img, path) -> None:
    """Write ``img`` as P5 PGM; values are clamped to [0, 1] and rounded half up."""
    data = encode_pgm(img)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write image: {exc.strerror}", os.fspath(path)) from exc
