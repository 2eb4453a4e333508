"""Binary PPM (P6, maxval 255) images as float arrays in [0, 1]."""
from __future__ import annotations

import os

import numpy as np

from .errors import FormatError

__all__ = ["decode_ppm", "encode_ppm", "quantize", "read_ppm", "write_ppm"]

_WS = b" \t\n\r\v\f"


def quantize(image) -> np.ndarray:
    """uint8 values round(v * 255) after clamping to [0, 1]."""
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got shape {img.shape}")
    H, W = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (W, H) + quantize(img).tobytes()


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` header tokens (skipping # comments) and the offset after them."""
    out, i, n = [], 0, len(data)
    while len(out) < count:
        while i < n and data[i] in _WS:
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and data[j] not in _WS and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise FormatError("truncated PPM header")
        out.append(data[i:j])
        i = j
    return out, i


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        kind = data[:2].decode("latin-1", "replace")
        raise FormatError(f"not a binary PPM (magic {kind!r}); only P6 is supported")
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P6":
        raise FormatError("not a binary PPM")
    try:
        W, H, M = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad PPM header field: {exc}") from None
    if W < 1 or H < 1:
        raise FormatError(f"bad PPM size {W}x{H}")
    if M != 255:
        raise FormatError(f"unsupported PPM maxval {M}; only 255 is supported")
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("PPM header must end with one whitespace byte")
    payload = data[pos + 1:]
    need = 3 * W * H
    if len(payload) < need:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise FormatError(f"PPM has {len(payload) - need} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(H, W, 3).astype(float) / 255.0


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from None
    return decode_ppm(data)


def write_ppm(image, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))
