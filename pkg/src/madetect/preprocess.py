"""Luminosity and contrast normalization of the green channel.

Each pixel is z-scored against the mean and standard deviation of the
masked pixels in a square window around it, clamped, and mapped to [0, 1].
Window statistics come from integral images, so the cost does not depend
on the window size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import ImageError


@dataclass(frozen=True)
class PreprocessConfig:
    window_radius: int = 50
    epsilon: float = 1e-4
    clip: float = 3.0

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.epsilon <= 0 or self.clip <= 0:
            raise ValueError("epsilon and clip must be positive")

    @classmethod
    def for_fov(cls, fov_diameter: float, **kw) -> "PreprocessConfig":
        """Defaults scaled from a ~2000 px field of view."""
        radius = max(1, int(round(50 * fov_diameter / 2000.0)))
        return cls(window_radius=radius, **kw)


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum of `a` over the (2r+1)^2 window at every pixel, window clipped at borders."""
    h, w = a.shape
    ii = _integral(a)
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)]
            - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)])


def local_stats(values: np.ndarray, mask: np.ndarray, radius: int):
    """Masked local mean and (population) standard deviation."""
    m = mask.astype(np.float64)
    # centering on the global masked mean keeps E[x^2] - E[x]^2 well conditioned
    shift = values[mask].mean()
    v = np.where(mask, values - shift, 0.0)
    n = box_sum(m, radius)
    s1 = box_sum(v, radius)
    s2 = box_sum(v * v, radius)
    safe_n = np.maximum(n, 1.0)
    mean = s1 / safe_n
    var = np.maximum(s2 / safe_n - mean * mean, 0.0)
    return mean + shift, np.sqrt(var)


def normalize(green: np.ndarray, mask: np.ndarray | None = None,
              cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Normalized image I_N in [0, 1]; pixels outside `mask` are set to 0.5."""
    green = np.asarray(green, dtype=np.float64)
    if mask is None:
        mask = np.ones(green.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ImageError("empty mask")
    if 2 * cfg.window_radius >= min(green.shape):
        raise ValueError("window_radius must be smaller than half the image size")
    mean, std = local_stats(green, mask, cfg.window_radius)
    z = (green - mean) / np.maximum(std, cfg.epsilon)
    z = np.clip(z, -cfg.clip, cfg.clip)
    out = (z + cfg.clip) / (2.0 * cfg.clip)
    out[~mask] = 0.5
    return out
