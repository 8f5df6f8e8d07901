"""Euclidean-plane image warps on grayscale rasters.

Images are numpy arrays indexed ``[..., y, x]`` with the origin at the top-left
pixel centre, x to the right and y downward. Leading axes are treated as a
batch, so every warp accepts a single (h, w) image or an (N, h, w) stack.

Rotation angles are in degrees. A positive angle turns the content
counter-clockwise in math axes ``(x, y)``; since y points down in a raster this
appears clockwise on screen. All warps pull: each output pixel is sampled from
the input at the inverse-mapped location, and anything that falls outside the
canvas reads as 0.0.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class InterpMode(str, enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


class BadFactor(ValueError):
    pass


MNIST_CENTER = (13.5, 13.5)


@dataclass(frozen=True)
class Sampler:
    """Precomputed gather for a fixed set of sample points on an (h, w) raster.

    ``index`` holds flat pixel indices and ``weight`` the matching interpolation
    weights, both shaped ``out_shape + (k,)`` where k is 4 (bilinear) or 1
    (nearest). Neighbours that fall off the raster carry weight 0.
    """

    index: np.ndarray
    weight: np.ndarray
    src_shape: tuple[int, int]

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.index.shape[:-1]

    def __call__(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img)
        h, w = self.src_shape
        if img.shape[-2:] != (h, w):
            raise ValueError(f"sampler built for {(h, w)}, got image {img.shape[-2:]}")
        flat = img.reshape(img.shape[:-2] + (h * w,))
        out = np.zeros(img.shape[:-2] + self.out_shape, dtype=np.result_type(img, np.float32))
        for k in range(self.index.shape[-1]):
            out += flat[..., self.index[..., k]] * self.weight[..., k].astype(out.dtype)
        return out


def make_sampler(sx, sy, shape: tuple[int, int], mode=InterpMode.BILINEAR) -> Sampler:
    """Build a Sampler reading a (h, w) raster at real coordinates (sx, sy)."""
    h, w = shape
    sx = np.asarray(sx, dtype=np.float64)
    sy = np.asarray(sy, dtype=np.float64)
    # points fully outside the half-pixel border read as 0
    inside = (sx >= -0.5) & (sx <= w - 0.5) & (sy >= -0.5) & (sy <= h - 0.5)

    if InterpMode(mode) is InterpMode.NEAREST:
        ix = np.floor(sx + 0.5).astype(np.int64)
        iy = np.floor(sy + 0.5).astype(np.int64)
        ok = inside & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        index = np.where(ok, iy * w + ix, 0)[..., None]
        weight = ok.astype(np.float64)[..., None]
        return Sampler(index, weight, (h, w))

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    idx, wts = [], []
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = inside & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx.append(np.where(ok, yi * w + xi, 0))
        wts.append(np.where(ok, wgt, 0.0))
    return Sampler(np.stack(idx, axis=-1), np.stack(wts, axis=-1), (h, w))


def bilinear_sample(img: np.ndarray, sx: float, sy: float) -> float:
    """Sample one intensity at real pixel coordinates (sx, sy)."""
    img = np.asarray(img)
    return float(make_sampler(sx, sy, img.shape[-2:])(img))


def _pixel_grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def _cos_sin(angle: float) -> tuple[float, float]:
    a = float(angle) % 360.0
    # exact values on the axes keep quarter turns pure permutations
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    t = math.radians(a)
    return math.cos(t), math.sin(t)


def rotation_sampler(shape, angle: float, center=None, mode=InterpMode.BILINEAR) -> Sampler:
    if not math.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    h, w = shape
    xc, yc = center if center is not None else ((w - 1) / 2, (h - 1) / 2)
    c, s = _cos_sin(angle)
    xs, ys = _pixel_grid(h, w)
    dx, dy = xs - xc, ys - yc
    # inverse of the forward rotation (x, y) -> (c x - s y, s x + c y)
    return make_sampler(xc + c * dx + s * dy, yc - s * dx + c * dy, (h, w), mode)


def scale_sampler(shape, factor: float, center=None, mode=InterpMode.BILINEAR) -> Sampler:
    if not (0.0 < factor <= 1.0):
        raise BadFactor(f"scale factor must lie in (0, 1], got {factor}")
    h, w = shape
    xc, yc = center if center is not None else ((w - 1) / 2, (h - 1) / 2)
    xs, ys = _pixel_grid(h, w)
    return make_sampler(xc + (xs - xc) / factor, yc + (ys - yc) / factor, (h, w), mode)


def rotate(img, angle: float, center=None, mode=InterpMode.BILINEAR) -> np.ndarray:
    img = np.asarray(img)
    return rotation_sampler(img.shape[-2:], angle, center, mode)(img)


def scale(img, factor: float, center=None, mode=InterpMode.BILINEAR) -> np.ndarray:
    """Shrink content by ``factor`` about ``center``; the canvas size is unchanged."""
    img = np.asarray(img)
    return scale_sampler(img.shape[-2:], factor, center, mode)(img)


def circular_shift_columns(img, k: int) -> np.ndarray:
    """Column j of the result is column (j - k) mod w of the input."""
    return np.roll(np.asarray(img), int(k), axis=-1)


def shift_rows(img, k: int, fill: float = 0.0) -> np.ndarray:
    """Non-circular vertical shift by k rows (positive moves content down)."""
    img = np.asarray(img)
    h = img.shape[-2]
    out = np.full_like(img, fill)
    k = int(k)
    if abs(k) >= h:
        return out
    if k >= 0:
        out[..., k:, :] = img[..., :h - k, :]
    else:
        out[..., :h + k, :] = img[..., -k:, :]
    return out
