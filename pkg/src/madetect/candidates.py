"""Candidate extraction by iterative thresholding of per-scale weighted images.

For every scale and every threshold ``t`` the pixels with ``I_WO < t`` are
labelled into 8-connected components.  Components that are small, not too
elongated, sparse within their bounding box and enclose at least one hole
are kept.  Kept regions from all (scale, threshold) passes are merged when
they share pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from skimage.measure import regionprops

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ExtractionConfig:
    threshold_start: float = 0.1
    threshold_end: float = 1.0
    threshold_step: float = 0.05
    max_area: float = 300
    max_eccentricity: float = 0.9
    max_extent: float = 0.3
    per_scale_normalization: bool = True

    def __post_init__(self):
        if not self.threshold_start < self.threshold_end:
            raise ValueError("threshold_start must be below threshold_end")
        if self.threshold_step <= 0:
            raise ValueError("threshold_step must be positive")
        if min(self.max_area, self.max_eccentricity, self.max_extent) <= 0:
            raise ValueError("shape constraints must be positive")

    def thresholds(self) -> np.ndarray:
        n = int(math.floor((self.threshold_end - self.threshold_start) / self.threshold_step + 1e-9))
        return np.round(self.threshold_start + self.threshold_step * np.arange(n + 1), 10)


@dataclass(frozen=True)
class RegionProps:
    area: int
    convex_area: int
    perimeter: float
    eccentricity: float
    extent: float
    euler_number: int
    solidity: float
    equiv_diameter: float
    major_axis: float
    minor_axis: float


def _pixels_to_image(xs: np.ndarray, ys: np.ndarray):
    x0, y0 = xs.min(), ys.min()
    img = np.zeros((ys.max() - y0 + 1, xs.max() - x0 + 1), dtype=bool)
    img[ys - y0, xs - x0] = True
    return img


def euler_number(region: np.ndarray) -> int:
    """Components (8-connected) minus holes (4-connected background)."""
    padded = np.pad(region, 1)
    _, n_obj = ndimage.label(padded, structure=EIGHT)
    _, n_bg = ndimage.label(~padded)
    return n_obj - (n_bg - 1)


def region_props(xs, ys) -> RegionProps:
    """Shape descriptors of a pixel set given as x and y coordinate arrays."""
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    img = _pixels_to_image(xs, ys)
    rp = regionprops(img.astype(np.uint8))[0]
    area = int(img.sum())
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    major, minor, ecc = ellipse_axes(np.mean(dx * dx) + 1 / 12, np.mean(dy * dy) + 1 / 12,
                                     np.mean(dx * dy))
    convex_area = int(rp.area_convex)
    return RegionProps(
        area=area,
        convex_area=convex_area,
        perimeter=float(rp.perimeter),
        eccentricity=float(ecc),
        extent=area / img.size,
        euler_number=euler_number(img),
        solidity=area / convex_area,
        equiv_diameter=math.sqrt(4 * area / math.pi),
        major_axis=float(major),
        minor_axis=float(minor),
    )


@dataclass
class CandidateRegion:
    """Connected pixel set; ``ys, xs`` index the image as ``img[ys, xs]``."""
    xs: np.ndarray
    ys: np.ndarray
    source_scale: float = float("nan")
    source_threshold: float = float("nan")

    @property
    def area(self) -> int:
        return int(self.xs.size)

    @property
    def centroid(self):
        return float(self.xs.mean()), float(self.ys.mean())

    @property
    def bbox(self):
        """(x_min, y_min, x_max, y_max), inclusive."""
        return int(self.xs.min()), int(self.ys.min()), int(self.xs.max()), int(self.ys.max())

    @cached_property
    def shape(self) -> RegionProps:
        return region_props(self.xs, self.ys)

    def filled_contains(self, x: float, y: float) -> bool:
        """True if (x, y) lies on the region or inside one of its holes."""
        x0, y0, _, _ = self.bbox
        img = ndimage.binary_fill_holes(_pixels_to_image(self.xs, self.ys))
        ix, iy = int(round(x)) - x0, int(round(y)) - y0
        return 0 <= iy < img.shape[0] and 0 <= ix < img.shape[1] and bool(img[iy, ix])

    def shifted(self, dx: int, dy: int) -> "CandidateRegion":
        return CandidateRegion(self.xs + dx, self.ys + dy, self.source_scale, self.source_threshold)


def ellipse_axes(mu20, mu02, mu11):
    """Major axis, minor axis and eccentricity of the moment-equivalent ellipse."""
    common = np.sqrt(((mu20 - mu02) / 2) ** 2 + mu11 ** 2)
    l1 = (mu20 + mu02) / 2 + common
    l2 = np.maximum((mu20 + mu02) / 2 - common, 0)
    ecc = np.sqrt(np.clip(1 - l2 / np.maximum(l1, 1e-300), 0, 1))
    return 4 * np.sqrt(l1), 4 * np.sqrt(l2), ecc


def _component_moments(labels, n, index):
    """Per-label eccentricity from normalized second central moments."""
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    cnt = np.bincount(lab, minlength=n + 1).astype(np.float64)
    cnt[0] = 1
    mx = np.bincount(lab, xs, n + 1) / cnt
    my = np.bincount(lab, ys, n + 1) / cnt
    dx = xs - mx[lab]
    dy = ys - my[lab]
    # 1/12 accounts for the pixel's own extent, as in the usual region descriptors
    mu20 = np.bincount(lab, dx * dx, n + 1) / cnt + 1 / 12
    mu02 = np.bincount(lab, dy * dy, n + 1) / cnt + 1 / 12
    mu11 = np.bincount(lab, dx * dy, n + 1) / cnt
    return ellipse_axes(mu20, mu02, mu11)[2][index]


def select_components(binary: np.ndarray, cfg: ExtractionConfig):
    """Components of `binary` passing the area, eccentricity, Euler and extent tests.

    Returns a list of ``(ys, xs)`` pixel arrays.
    """
    labels, n = ndimage.label(binary, structure=EIGHT)
    if n == 0:
        return []
    area = np.bincount(labels.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(labels)
    bbox_area = np.array([1] + [(s[0].stop - s[0].start) * (s[1].stop - s[1].start) for s in slices])
    extent = area / bbox_area
    idx = np.nonzero((area < cfg.max_area) & (extent < cfg.max_extent))[0]
    idx = idx[idx > 0]
    if idx.size == 0:
        return []
    ecc = _component_moments(labels, n, idx)
    idx = idx[ecc < cfg.max_eccentricity]
    out = []
    for k in idx:
        sl = slices[k - 1]
        sub = labels[sl] == k
        if euler_number(sub) > 0:
            continue
        ys, xs = np.nonzero(sub)
        out.append((ys + sl[0].start, xs + sl[1].start))
    return out


def rescale_unit(field: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Affine map of the masked range of `field` onto [0, 1]."""
    vals = field[mask]
    lo, hi = vals.min(), vals.max()
    if hi - lo <= 0:
        return np.full(field.shape, 0.5)
    return (field - lo) / (hi - lo)


class _UnionFind:
    def __init__(self):
        self.parent = []

    def add(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def merge_regions(regions, shape) -> list[CandidateRegion]:
    """Merge regions that share at least one pixel, transitively.

    `regions` is a sequence of ``(ys, xs, scale, threshold)``.  The merged
    region keeps the provenance of its largest contributor (first one on ties).
    Output is sorted by centroid y, then x.
    """
    if not regions:
        return []
    owner = np.full(shape, -1, dtype=np.int64)
    uf = _UnionFind()
    for ys, xs, _, _ in regions:
        k = uf.add()
        prev = owner[ys, xs]
        for other in np.unique(prev[prev >= 0]):
            uf.union(k, int(other))
        owner[ys, xs] = k
    groups: dict[int, list[int]] = {}
    for k in range(len(regions)):
        groups.setdefault(uf.find(k), []).append(k)
    merged = []
    for members in groups.values():
        flat = np.unique(np.concatenate([regions[k][0] * shape[1] + regions[k][1] for k in members]))
        ys, xs = np.divmod(flat, shape[1])
        best = max(members, key=lambda k: (regions[k][0].size, -k))
        merged.append(CandidateRegion(xs, ys, float(regions[best][2]), float(regions[best][3])))
    merged.sort(key=lambda c: (c.centroid[1], c.centroid[0]))
    return merged


def deduplicate(candidates, shape=None) -> list[CandidateRegion]:
    """Merge candidates with overlapping pixel sets so the result is pairwise disjoint."""
    candidates = list(candidates)
    if not candidates:
        return []
    if shape is None:
        shape = (max(int(c.ys.max()) for c in candidates) + 1,
                 max(int(c.xs.max()) for c in candidates) + 1)
    return merge_regions([(c.ys, c.xs, c.source_scale, c.source_threshold) for c in candidates], shape)


def extract_candidates(per_scale: dict, cfg: ExtractionConfig = ExtractionConfig(),
                       mask: np.ndarray | None = None) -> list[CandidateRegion]:
    """Run the threshold sweep on every scale's I_WO image and merge the survivors."""
    if not per_scale:
        return []
    shape = next(iter(per_scale.values())).shape
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    kept = []
    for sigma in sorted(per_scale):
        field = np.asarray(per_scale[sigma], dtype=np.float64)
        if cfg.per_scale_normalization:
            field = rescale_unit(field, mask)
        for t in cfg.thresholds():
            binary = (field < t) & mask
            for ys, xs in select_components(binary, cfg):
                kept.append((ys, xs, sigma, float(t)))
    return merge_regions(kept, shape)
