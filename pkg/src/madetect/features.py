"""The 29 per-candidate features and their z-scoring.

Features 1-7 describe intensity on the normalized image, 8-17 the shape of
the candidate region and 18-29 the convergence-filter responses and radii
at the candidate centroid, first on the normalized image and then on the
gradient-weighted image.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .lcf import SupportConfig, gradient_field, lcf_at_points

FEATURE_NAMES = (
    "Gc", "Gmean", "Gmax", "Gmin", "GNmean", "GNmax", "GNmin",
    "SArea", "SConA", "SSol", "SExt", "SPer", "SCirD", "SAxiA", "SAxiB", "SEcc", "SEul",
    "FNARF", "FNSBF", "FNSEF", "RNARF", "RNSBF", "RGSEF",
    "FWARF", "FWSBF", "FWSEF", "RWARF", "RWSBF", "RWSEF",
)
N_FEATURES = len(FEATURE_NAMES)


def _rounded_centroid(c, shape):
    cx, cy = c.centroid
    ix = min(max(int(round(cx)), 0), shape[1] - 1)
    iy = min(max(int(round(cy)), 0), shape[0] - 1)
    return ix, iy


def neighborhood_side(area: int) -> int:
    return max(3, int(round(math.sqrt(3 * area))))


def intensity_features(img: np.ndarray, c) -> np.ndarray:
    """f1-f7: centre value, candidate mean/max/min, neighbourhood mean/max/min."""
    ix, iy = _rounded_centroid(c, img.shape)
    vals = img[c.ys, c.xs]
    side = neighborhood_side(c.area)
    half = side // 2
    x0, x1 = max(ix - half, 0), min(ix - half + side, img.shape[1])
    y0, y1 = max(iy - half, 0), min(iy - half + side, img.shape[0])
    nb = img[y0:y1, x0:x1]
    return np.array([img[iy, ix], vals.mean(), vals.max(), vals.min(),
                     nb.mean(), nb.max(), nb.min()])


def shape_features(c) -> np.ndarray:
    """f8-f17 in table order."""
    p = c.shape
    return np.array([p.area, p.convex_area, p.solidity, p.extent, p.perimeter,
                     p.equiv_diameter, p.major_axis, p.minor_axis, p.eccentricity,
                     p.euler_number], dtype=np.float64)


def _lcf_block(field, points, cfg):
    r = lcf_at_points(field, points, cfg)
    return np.column_stack([r["F_ARF"], r["F_SBF"], r["F_SEF"], r["R_ARF"], r["R_SBF"], r["R_SEF"]])


def lcf_features(normalized: np.ndarray, weighted: np.ndarray, c,
                 cfg: SupportConfig = SupportConfig(), mask: np.ndarray | None = None) -> np.ndarray:
    """f18-f29 for one candidate."""
    return lcf_feature_matrix(normalized, weighted, [c], cfg, mask)[0]


def lcf_feature_matrix(normalized, weighted, candidates, cfg: SupportConfig = SupportConfig(),
                       mask=None) -> np.ndarray:
    points = np.array([c.centroid for c in candidates], dtype=np.float64).reshape(-1, 2)
    if mask is not None:
        for c in candidates:
            ix, iy = _rounded_centroid(c, mask.shape)
            if not mask[iy, ix]:
                raise ValueError(f"candidate centroid {c.centroid} outside the FOV mask")
    if len(points) == 0:
        return np.zeros((0, 12))
    fn = gradient_field(normalized, cfg.gradient_sigma)
    fw = gradient_field(weighted, cfg.gradient_sigma)
    return np.hstack([_lcf_block(fn, points, cfg), _lcf_block(fw, points, cfg)])


def extract_features(normalized: np.ndarray, weighted: np.ndarray, candidates,
                     cfg: SupportConfig = SupportConfig(), mask=None) -> np.ndarray:
    """Feature matrix with one row of 29 values per candidate."""
    candidates = list(candidates)
    if not candidates:
        return np.zeros((0, N_FEATURES))
    head = np.array([np.concatenate([intensity_features(normalized, c), shape_features(c)])
                     for c in candidates])
    return np.hstack([head, lcf_feature_matrix(normalized, weighted, candidates, cfg, mask)])


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least two rows to fit normalization statistics")
        mean = X.mean(axis=0)
        std = X.std(axis=0, ddof=1)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.size:
            raise ValueError(f"expected {self.mean.size} columns, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize_features(X: np.ndarray, stats: NormStats | None = None):
    """Z-score columns with `stats` (fitted on `X` when omitted); returns (Z, stats)."""
    if stats is None:
        stats = NormStats.fit(X)
    return stats.apply(X), stats


def write_feature_csv(path, X, centroids, labels=None, ids=None) -> None:
    X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cx", "cy", "label", *FEATURE_NAMES])
        for k in range(len(X)):
            ident = ids[k] if ids is not None else k
            lab = "" if labels is None else int(labels[k])
            w.writerow([ident, repr(float(centroids[k, 0])), repr(float(centroids[k, 1])), lab,
                        *(repr(float(v)) for v in X[k])])


def read_feature_csv(path):
    """Returns (ids, centroids, X, labels); labels is None when the column is empty."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [n for n in FEATURE_NAMES if rows and n not in rows[0]]
    if missing:
        raise ValueError(f"feature file {path} lacks columns {missing}")
    ids = [r["id"] for r in rows]
    cents = np.array([[float(r["cx"]), float(r["cy"])] for r in rows]).reshape(-1, 2)
    X = np.array([[float(r[n]) for n in FEATURE_NAMES] for r in rows]).reshape(-1, N_FEATURES)
    labels = None
    if rows and all(r["label"] != "" for r in rows):
        labels = np.array([int(r["label"]) for r in rows])
    return ids, cents, X, labels
