"""Multi-scale, multi-orientation gradient weighting.

The normalized image is filtered with rotated first-order Gaussian
derivatives; the gradient magnitude ``M`` is turned into a weight
``(1 - M^2) / (1 + M^2)`` that is close to 1 in flat areas and drops on
edges.  Summing the weights over orientations gives one image per scale
(``I_WO``) and summing those over scales gives ``I_WOS``, where small dark
round lesions show up as rings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

DEFAULT_SCALES = (1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_ORIENTATIONS = tuple(k * math.pi / 12 for k in range(7))


@dataclass(frozen=True)
class GradientConfig:
    scales: tuple = DEFAULT_SCALES
    orientations: tuple = DEFAULT_ORIENTATIONS
    kernel_truncation: float = 4.0
    # 1/sqrt(2 pi sigma^2): the 1-D style normalization of the 2-D Gaussian
    prefactor: str = "sqrt"

    def __post_init__(self):
        if not self.scales or min(self.scales) <= 0:
            raise ValueError("scales must be non-empty and positive")
        if not self.orientations or not all(0 <= t <= math.pi / 2 + 1e-12 for t in self.orientations):
            raise ValueError("orientations must be non-empty and within [0, pi/2]")
        if self.kernel_truncation < 3:
            raise ValueError("kernel_truncation must be >= 3")
        if self.prefactor not in ("sqrt", "unit"):
            raise ValueError("prefactor must be 'sqrt' or 'unit'")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "orientations", tuple(float(t) for t in self.orientations))


def gaussian_prefactor(sigma: float, kind: str = "sqrt") -> float:
    if kind == "sqrt":
        return 1.0 / math.sqrt(2 * math.pi * sigma * sigma)
    return 1.0 / (2 * math.pi * sigma * sigma)


def kernel_halfwidth(sigma: float, truncation: float) -> int:
    return max(1, int(math.ceil(truncation * sigma)))


def gaussian_kernels_1d(sigma: float, truncation: float = 4.0):
    """Sampled 1-D Gaussian ``g`` and its derivative ``g'`` (unnormalized exponentials)."""
    r = kernel_halfwidth(sigma, truncation)
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-x * x / (2 * sigma * sigma))
    dg = -x / (sigma * sigma) * g
    return g, dg


def gaussian_gradient(image: np.ndarray, sigma: float, truncation: float = 4.0,
                      prefactor: str = "sqrt"):
    """Convolutions of `image` with dG/dx and dG/dy, computed separably.

    Borders use half-sample symmetric reflection.
    """
    img = np.asarray(image, dtype=np.float64)
    g, dg = gaussian_kernels_1d(sigma, truncation)
    c = gaussian_prefactor(sigma, prefactor)
    # convolution flips the kernel; correlate with the flipped (odd) derivative
    gx = correlate1d(correlate1d(img, dg[::-1], axis=1, mode="reflect"), g, axis=0, mode="reflect")
    gy = correlate1d(correlate1d(img, g, axis=1, mode="reflect"), dg[::-1], axis=0, mode="reflect")
    return c * gx, c * gy


def steer(gx: np.ndarray, gy: np.ndarray, theta: float):
    """Responses of the derivative kernels rotated by `theta`."""
    ct, st = math.cos(theta), math.sin(theta)
    return ct * gx + st * gy, -st * gx + ct * gy


def gradient_magnitude(image: np.ndarray, sigma: float, theta: float = 0.0,
                       truncation: float = 4.0, prefactor: str = "sqrt") -> np.ndarray:
    """Gradient magnitude I_M from the rotated Gaussian-derivative pair."""
    gx, gy = gaussian_gradient(image, sigma, truncation, prefactor)
    u, v = steer(gx, gy, theta)
    return np.hypot(u, v)


def weight_transform(magnitude: np.ndarray) -> np.ndarray:
    """Map gradient magnitude to a weight in (-1, 1]."""
    m2 = np.square(np.asarray(magnitude, dtype=np.float64))
    return (1.0 - m2) / (1.0 + m2)


@dataclass
class WeightedImages:
    per_scale: dict = field(default_factory=dict)  # sigma -> I_WO
    total: np.ndarray | None = None                 # I_WOS


def aggregate(image: np.ndarray, cfg: GradientConfig = GradientConfig()) -> WeightedImages:
    """Per-scale orientation sums I_WO and their sum over scales I_WOS.

    Scales and orientations are accumulated in ascending order.
    """
    out = WeightedImages()
    total = np.zeros(np.shape(image), dtype=np.float64)
    for sigma in sorted(cfg.scales):
        gx, gy = gaussian_gradient(image, sigma, cfg.kernel_truncation, cfg.prefactor)
        wo = np.zeros_like(total)
        for theta in sorted(cfg.orientations):
            u, v = steer(gx, gy, theta)
            wo += weight_transform(np.hypot(u, v))
        out.per_scale[sigma] = wo
        total += wo
    out.total = total
    return out
