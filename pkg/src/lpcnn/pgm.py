"""Binary PGM (P5) reading and writing for 8-bit grayscale images."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class BadFormat(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Pull ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise BadFormat("header ends early")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        out.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 image into a float32 (h, w) array scaled to [0, 1]."""
    toks, start = _tokens(data, 4)
    if toks[0] != b"P5":
        raise BadFormat(f"not a binary PGM (magic {toks[0][:8]!r})")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise BadFormat(f"bad PGM header: {exc}") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise BadFormat(f"bad PGM geometry {w}x{h} maxval {maxval}")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    raster = data[start:start + n]
    if len(raster) < n:
        raise BadFormat("PGM raster truncated")
    return np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(np.float32) / np.float32(maxval)


def encode_pgm(img) -> bytes:
    """Encode intensities in [0, 1] as an 8-bit P5 image (values are clipped)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    raw = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = raw.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, img) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(img))
    return path
