"""Local convergence index filters: adaptive ring (ARF), sliding band (SBF)
and super-elliptical (SEF).

All three filters look at the same polar sampling pattern around a query
point: ``N`` radial lines at angles ``theta_i = 2 pi i / N`` and integer
distances ``m``.  The sample on line ``i`` at distance ``m`` sits at
``(x + m sin theta_i, y + m cos theta_i)``.  At each sample the filters use
the cosine between the local field vector and the unit vector pointing back
at the query point, so a field that converges on the point scores +1.

The field is the *descent* direction ``-grad I``: dark round structures,
such as microaneurysms, attract it and therefore give high responses.

A band of width ``d`` starting at radius ``r`` covers the ``d`` samples
``m = r, ..., r + d - 1``.  Samples at ``m = 0``, outside the image, or on a
vanishing gradient contribute 0 but are still counted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .weighting import gaussian_gradient

DEGENERATE_GRADIENT = 1e-12
# values within this of the maximum count as ties and go to the smallest index
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SupportConfig:
    num_lines: int = 16
    band_width: int = 2
    r_min: int = 1
    r_max: int = 15
    gradient_sigma: float = 1.0
    # "mean": every direction weighs the same; "printed": each SEF term weighs 1/N
    sef_normalization: str = "mean"

    def __post_init__(self):
        if self.num_lines < 8 or self.num_lines % 4:
            raise ValueError("num_lines must be >= 8 and divisible by 4")
        if self.band_width < 1:
            raise ValueError("band_width must be >= 1")
        if not 0 <= self.r_min < self.r_max:
            raise ValueError("need 0 <= r_min < r_max")
        if self.gradient_sigma <= 0:
            raise ValueError("gradient_sigma must be positive")
        if self.sef_normalization not in ("mean", "printed"):
            raise ValueError("sef_normalization must be 'mean' or 'printed'")

    @classmethod
    def for_fov(cls, fov_diameter: float, **kw) -> "SupportConfig":
        """Radii scaled from the defaults at a ~2000 px field of view."""
        f = fov_diameter / 2000.0
        return cls(r_min=max(1, int(round(1 * f))), r_max=max(2, int(round(15 * f))), **kw)

    @property
    def max_sample(self) -> int:
        return self.r_max + self.band_width - 1


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    @property
    def shape(self):
        return self.gx.shape

    def orientation(self) -> np.ndarray:
        """Angle alpha with (sin alpha, cos alpha) along the field."""
        return np.arctan2(self.gx, self.gy)


def gradient_field(image: np.ndarray, sigma: float = 1.0) -> GradientField:
    """Descent field ``-grad I`` from Gaussian derivatives at scale `sigma`."""
    gx, gy = gaussian_gradient(image, sigma)
    return GradientField(-gx, -gy)


@dataclass
class FilterOutput:
    response: np.ndarray
    radius: np.ndarray
    per_direction_radii: np.ndarray | None = None


def _bilinear(a: np.ndarray, x: np.ndarray, y: np.ndarray, inside: np.ndarray) -> np.ndarray:
    h, w = a.shape
    xc = np.where(inside, x, 0.0)
    yc = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def convergence_cosines(field: GradientField, cx, cy, num_lines: int, max_sample: int) -> np.ndarray:
    """cos(phi) for every line and distance around the given centres.

    Returns an array of shape ``(num_lines, max_sample + 1) + shape(cx)``.
    """
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    h, w = field.shape
    out = np.zeros((num_lines, max_sample + 1) + cx.shape)
    for i in range(num_lines):
        theta = 2 * math.pi * i / num_lines
        st, ct = math.sin(theta), math.cos(theta)
        for m in range(1, max_sample + 1):
            x = cx + m * st
            y = cy + m * ct
            inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
            gx = _bilinear(field.gx, x, y, inside)
            gy = _bilinear(field.gy, x, y, inside)
            norm = np.hypot(gx, gy)
            ok = inside & (norm >= DEGENERATE_GRADIENT)
            # unit vector from the sample back to the centre is -(st, ct)
            c = -(st * gx + ct * gy) / np.where(ok, norm, 1.0)
            out[i, m] = np.where(ok, c, 0.0)
    return out


def first_argmax(values: np.ndarray, axis: int) -> np.ndarray:
    """Smallest index whose value is within TIE_TOLERANCE of the maximum."""
    top = values.max(axis=axis, keepdims=True)
    return np.argmax(values >= top - TIE_TOLERANCE, axis=axis)


def _band_sums(cos: np.ndarray, d: int, r_lo: int, r_hi: int) -> np.ndarray:
    """Sums over m = r .. r+d-1 for r = r_lo .. r_hi; radius becomes axis 1."""
    csum = np.concatenate([np.zeros((cos.shape[0], 1) + cos.shape[2:]), np.cumsum(cos, axis=1)], axis=1)
    r = np.arange(r_lo, r_hi + 1)
    return csum[:, r + d] - csum[:, r]


def _arf(cos: np.ndarray, cfg: SupportConfig):
    d = cfg.band_width
    bands = _band_sums(cos, d, 0, cfg.r_max).sum(axis=0) / (cfg.num_lines * d)
    k = first_argmax(bands, 0)
    return np.take_along_axis(bands, k[None], 0)[0], k.astype(np.float64)


def _sbf(cos: np.ndarray, cfg: SupportConfig):
    d = cfg.band_width
    bands = _band_sums(cos, d, cfg.r_min, cfg.r_max)  # (N, R, ...)
    k = first_argmax(bands, 1)
    best = np.take_along_axis(bands, k[:, None], 1)[:, 0] / d
    radii = (k + cfg.r_min).astype(np.float64)
    return best.mean(axis=0), radii.mean(axis=0), radii


def sef_direction_groups(num_lines: int):
    """Direction index groups of the super-ellipse for each orientation j.

    For every j: the two axis pairs, then the N/4 - 1 four-fold symmetric sets.
    """
    n = num_lines
    groups = []
    for j in range(n // 4):
        axes = [(j, (j + n // 2) % n), ((j + n // 4) % n, (j + 3 * n // 4) % n)]
        quads = [((j + i) % n, (j - i + n // 2) % n, (j + i + n // 2) % n, (j - i + n) % n)
                 for i in range(1, n // 4)]
        groups.append((axes, quads))
    return groups


def _sef(cos: np.ndarray, cfg: SupportConfig):
    d, n = cfg.band_width, cfg.num_lines
    bands = _band_sums(cos, d, cfg.r_min, cfg.r_max)  # (N, R, ...)
    mean_weights = cfg.sef_normalization == "mean"
    responses, radii = [], []
    for axes, quads in sef_direction_groups(n):
        total = 0.0
        axis_r = []
        for pair in axes:
            s = bands[list(pair)].sum(axis=0)
            k = first_argmax(s, 0)
            term = np.take_along_axis(s, k[None], 0)[0] / (2 * d)
            total = total + (2 * term if mean_weights else term)
            axis_r.append(k + cfg.r_min)
        for quad in quads:
            s = bands[list(quad)].sum(axis=0)
            term = s.max(axis=0) / (4 * d)
            total = total + (4 * term if mean_weights else term)
        responses.append(total / n)
        radii.append((axis_r[0] + axis_r[1]) / 2.0)
    responses = np.stack(responses)
    j = first_argmax(responses, 0)
    return (np.take_along_axis(responses, j[None], 0)[0],
            np.take_along_axis(np.stack(radii), j[None], 0)[0].astype(np.float64))


def arf(field: GradientField, cfg: SupportConfig = SupportConfig(), chunk_rows: int = 32) -> FilterOutput:
    """Dense adaptive ring filter response and radius maps."""
    return _dense(field, cfg, chunk_rows)["arf"]


def sbf(field: GradientField, cfg: SupportConfig = SupportConfig(), chunk_rows: int = 32) -> FilterOutput:
    """Dense sliding band filter response and mean-radius maps."""
    return _dense(field, cfg, chunk_rows)["sbf"]


def sef(field: GradientField, cfg: SupportConfig = SupportConfig(), chunk_rows: int = 32) -> FilterOutput:
    """Dense super-elliptical filter response and radius maps."""
    return _dense(field, cfg, chunk_rows)["sef"]


def dense_maps(field: GradientField, cfg: SupportConfig = SupportConfig(), chunk_rows: int = 32) -> dict:
    """All three filters over every pixel, sharing one pass of polar sampling."""
    return _dense(field, cfg, chunk_rows)


def _dense(field: GradientField, cfg: SupportConfig, chunk_rows: int) -> dict:
    h, w = field.shape
    out = {k: FilterOutput(np.zeros((h, w)), np.zeros((h, w))) for k in ("arf", "sbf", "sef")}
    xs = np.arange(w, dtype=np.float64)
    for y0 in range(0, h, chunk_rows):
        ys = np.arange(y0, min(h, y0 + chunk_rows), dtype=np.float64)
        cy, cx = np.meshgrid(ys, xs, indexing="ij")
        res = _evaluate(field, cx, cy, cfg)
        sl = slice(y0, y0 + len(ys))
        for k in out:
            out[k].response[sl] = res[k][0]
            out[k].radius[sl] = res[k][1]
    return out


def _evaluate(field: GradientField, cx, cy, cfg: SupportConfig) -> dict:
    cos = convergence_cosines(field, cx, cy, cfg.num_lines, cfg.max_sample)
    a = _arf(cos, cfg)
    s = _sbf(cos, cfg)
    e = _sef(cos, cfg)
    return {"arf": a, "sbf": s[:2], "sbf_radii": s[2], "sef": e}


LCF_KEYS = ("F_ARF", "R_ARF", "F_SBF", "R_SBF", "F_SEF", "R_SEF")


def lcf_at_points(image: np.ndarray | GradientField, points, cfg: SupportConfig = SupportConfig(),
                  with_directions: bool = False) -> dict:
    """Filter responses and radii at the given (x, y) points only.

    `image` may be a raw image (its descent field is computed at
    ``cfg.gradient_sigma``) or a precomputed :class:`GradientField`.
    Returns a dict of 1-D arrays keyed by :data:`LCF_KEYS`.
    """
    field = image if isinstance(image, GradientField) else gradient_field(image, cfg.gradient_sigma)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = field.shape
    if pts.size and ((pts[:, 0] < 0) | (pts[:, 0] > w - 1) | (pts[:, 1] < 0) | (pts[:, 1] > h - 1)).any():
        raise ValueError("point outside image")
    if len(pts) == 0:
        out = {k: np.zeros(0) for k in LCF_KEYS}
        if with_directions:
            out["R_SBF_dirs"] = np.zeros((0, cfg.num_lines))
        return out
    res = _evaluate(field, pts[:, 0], pts[:, 1], cfg)
    out = {
        "F_ARF": res["arf"][0], "R_ARF": res["arf"][1],
        "F_SBF": res["sbf"][0], "R_SBF": res["sbf"][1],
        "F_SEF": res["sef"][0], "R_SEF": res["sef"][1],
    }
    if with_directions:
        out["R_SBF_dirs"] = res["sbf_radii"].T
    return out
