"""Log-polar resampling of Cartesian images.

A point (x, y) maps to ``rho = ln r`` and ``theta = atan2(y - yc, x - xc)``,
where r is its distance from the centre. Squaring the distance before the log
only multiplies rho by 2, which disappears once rho is normalised onto a fixed
number of rows, so plain ln r is used throughout.

The output raster puts theta along the columns and rho along the rows (row 0 is
the innermost ring). Rotating the source about the centre therefore becomes a
circular column shift of the output and scaling becomes a row shift.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .imageops import InterpMode, Sampler, make_sampler

TWO_PI = 2.0 * math.pi


class CenterSingularity(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LogPolarConfig:
    center: tuple[float, float] = (13.5, 13.5)
    r_min: float = 0.5
    r_max: float = 14.0
    n_theta: int = 28
    n_rho: int = 28
    theta_zero: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not (0 < self.r_min < self.r_max):
            raise ConfigError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.n_theta < 2 or self.n_rho < 2:
            raise ConfigError(f"need n_theta, n_rho >= 2, got {self.n_theta}, {self.n_rho}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rho, self.n_theta)

    @property
    def log_step(self) -> float:
        """Spacing of adjacent rings in ln r."""
        return math.log(self.r_max / self.r_min) / (self.n_rho - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d


@dataclass(frozen=True)
class SampleGrid:
    """Cartesian source coordinates of every (rho row, theta column) cell."""

    cfg: LogPolarConfig
    sx: np.ndarray
    sy: np.ndarray
    radii: np.ndarray = field(repr=False)
    angles: np.ndarray = field(repr=False)

    def sampler(self, src_shape, mode=InterpMode.BILINEAR) -> Sampler:
        return make_sampler(self.sx, self.sy, src_shape, mode)


def rho_theta(p, center) -> tuple[float, float]:
    x, y = p
    xc, yc = center
    dx, dy = x - xc, y - yc
    if dx == 0 and dy == 0:
        raise CenterSingularity("log-distance is undefined at the centre")
    theta = math.atan2(dy, dx) % TWO_PI
    if theta == TWO_PI:  # a tiny negative angle rounds up to the period
        theta = 0.0
    return math.log(math.hypot(dx, dy)), theta


def ring_radii(cfg: LogPolarConfig) -> np.ndarray:
    i = np.arange(cfg.n_rho, dtype=np.float64)
    return cfg.r_min * (cfg.r_max / cfg.r_min) ** (i / (cfg.n_rho - 1))


def column_angles(cfg: LogPolarConfig) -> np.ndarray:
    j = np.arange(cfg.n_theta, dtype=np.float64)
    return cfg.theta_zero + TWO_PI * j / cfg.n_theta


def make_grid(cfg: LogPolarConfig) -> SampleGrid:
    r = ring_radii(cfg)
    t = column_angles(cfg)
    xc, yc = cfg.center
    sx = xc + r[:, None] * np.cos(t)[None, :]
    sy = yc + r[:, None] * np.sin(t)[None, :]
    return SampleGrid(cfg, sx, sy, r, t)


def to_logpolar(img, grid: SampleGrid, mode=InterpMode.BILINEAR) -> np.ndarray:
    """Resample ``img`` (h, w) or (N, h, w) onto the grid -> (..., n_rho, n_theta)."""
    img = np.asarray(img)
    return grid.sampler(img.shape[-2:], mode)(img)


class LogPolarTransform:
    """Reusable forward transform for a fixed source shape (caches the gather)."""

    def __init__(self, cfg: LogPolarConfig, src_shape=(28, 28), mode=InterpMode.BILINEAR):
        self.cfg = cfg
        self.grid = make_grid(cfg)
        self.src_shape = tuple(src_shape)
        self._sampler = self.grid.sampler(self.src_shape, mode)

    def __call__(self, img, batch_size: int = 8192) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim == 2 or len(img) <= batch_size:
            return self._sampler(img)
        return np.concatenate([self._sampler(img[i:i + batch_size])
                               for i in range(0, len(img), batch_size)])


def from_logpolar(lp, cfg: LogPolarConfig, out_w: int, out_h: int) -> np.ndarray:
    """Approximate inverse: map each Cartesian pixel back into the log-polar raster.

    Theta wraps around the columns; pixels whose radius lies outside
    [r_min, r_max] are 0.
    """
    lp = np.asarray(lp)
    if lp.shape[-2:] != cfg.shape:
        raise ConfigError(f"log-polar image {lp.shape[-2:]} does not match config {cfg.shape}")
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    xc, yc = cfg.center
    dx, dy = xs - xc, ys - yc
    r = np.hypot(dx, dy)
    valid = (r >= cfg.r_min) & (r <= cfg.r_max)
    with np.errstate(divide="ignore"):
        row = np.log(np.where(valid, r, cfg.r_min) / cfg.r_min) / cfg.log_step
    row = np.clip(row, 0.0, cfg.n_rho - 1)
    col = ((np.arctan2(dy, dx) - cfg.theta_zero) % TWO_PI) * cfg.n_theta / TWO_PI

    r0 = np.floor(row).astype(np.int64)
    fr = row - r0
    r1 = np.minimum(r0 + 1, cfg.n_rho - 1)
    c0 = np.floor(col).astype(np.int64) % cfg.n_theta
    fc = col - np.floor(col)
    c1 = (c0 + 1) % cfg.n_theta

    out = ((1 - fr) * (1 - fc) * lp[..., r0, c0] + (1 - fr) * fc * lp[..., r0, c1]
           + fr * (1 - fc) * lp[..., r1, c0] + fr * fc * lp[..., r1, c1])
    return np.where(valid, out, 0.0).astype(np.result_type(lp, np.float32))


def compression_factor(cfg: LogPolarConfig, src_w: int, src_h: int) -> float:
    if src_w <= 0 or src_h <= 0:
        raise ValueError("source dimensions must be positive")
    return (cfg.n_theta * cfg.n_rho) / (src_w * src_h)


def scale_row_offset(cfg: LogPolarConfig, factor: float) -> float:
    """Rows by which scaling the source by ``factor`` moves the log-polar content up."""
    return math.log(1.0 / factor) / cfg.log_step
