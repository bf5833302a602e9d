"""Ground-truthed synthetic fundus-like scenes.

Scenes are built on a [0, 1] intensity canvas: a background (flat, linear
ramp or smoothed speckle), minus dark blobs (MA stand-ins) and dark vessel
segments.  The canvas becomes the green plane of an RGB image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

SUPERSAMPLE = 4


@dataclass(frozen=True)
class Blob:
    """Dark lesion.  For ``gaussian`` the profile std is ``radius / 2``;
    ``disc`` is a uniformly dark anti-aliased disc;
    ``annulus`` is a ring from ``radius`` to ``radius + width``; ``ellipse``
    uses semi-axes ``a``, ``b`` rotated by ``angle`` (radians)."""
    x: float
    y: float
    radius: float
    depth: float = 0.3
    shape: str = "gaussian"
    a: float = 0.0
    b: float = 0.0
    angle: float = 0.0
    width: float = 2.0
    bright: bool = False      # brightens instead of darkening
    annotated: bool = True    # counted in the ground truth

    @property
    def is_lesion(self) -> bool:
        return self.annotated and not self.bright


@dataclass(frozen=True)
class Vessel:
    x0: float
    y0: float
    x1: float
    y1: float
    width: float = 6.0
    depth: float = 0.3


@dataclass(frozen=True)
class SceneSpec:
    size: int = 128
    background: str = "flat"  # flat | gradient | speckle
    level: float = 0.6
    ramp: float = 0.2
    speckle: float = 0.0
    blobs: tuple = ()
    vessels: tuple = ()
    fov: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.background not in ("flat", "gradient", "speckle"):
            raise ValueError(f"unknown background {self.background!r}")
        for b in self.blobs:
            if not (0 <= b.x < self.size and 0 <= b.y < self.size):
                raise ValueError(f"blob at ({b.x}, {b.y}) outside a {self.size} px scene")
            if not 0 < b.depth <= 1:
                raise ValueError("blob depth must be in (0, 1]")
        for v in self.vessels:
            if not 0 < v.depth <= 1:
                raise ValueError("vessel depth must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["blobs"] = tuple(Blob(**b) for b in d.get("blobs", ()))
        d["vessels"] = tuple(Vessel(**v) for v in d.get("vessels", ()))
        return cls(**d)


@dataclass
class Truth:
    """Annotations of one image: rows of (x, y, radius)."""
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def has_lesion(self) -> bool:
        return len(self.points) > 0


def _coverage(size: int, inside) -> np.ndarray:
    """Fraction of each pixel covered by the region ``inside(x, y)``."""
    s = SUPERSAMPLE
    off = (np.arange(s) + 0.5) / s - 0.5
    ys = (np.arange(size)[:, None] + off[None, :]).ravel()
    xs = ys
    hit = inside(xs[None, :], ys[:, None]).astype(np.float64)
    return hit.reshape(size, s, size, s).mean(axis=(1, 3))


def _blob_profile(size: int, b: Blob) -> np.ndarray:
    if b.shape == "gaussian":
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        s = b.radius / 2.0
        return np.exp(-((xx - b.x) ** 2 + (yy - b.y) ** 2) / (2 * s * s))
    if b.shape == "disc":
        return _coverage(size, lambda x, y: (x - b.x) ** 2 + (y - b.y) ** 2 < b.radius ** 2)
    if b.shape == "annulus":
        lo, hi = b.radius, b.radius + b.width
        return _coverage(size, lambda x, y: (lo ** 2 <= (x - b.x) ** 2 + (y - b.y) ** 2)
                         & ((x - b.x) ** 2 + (y - b.y) ** 2 < hi ** 2))
    if b.shape == "ellipse":
        ca, sa = math.cos(b.angle), math.sin(b.angle)

        def inside(x, y):
            u = (x - b.x) * ca + (y - b.y) * sa
            v = -(x - b.x) * sa + (y - b.y) * ca
            return (u / b.a) ** 2 + (v / b.b) ** 2 < 1.0
        return _coverage(size, inside)
    raise ValueError(f"unknown blob shape {b.shape!r}")


def _vessel_profile(size: int, v: Vessel) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = v.x1 - v.x0, v.y1 - v.y0
    L2 = dx * dx + dy * dy
    t = np.clip(((xx - v.x0) * dx + (yy - v.y0) * dy) / L2, 0, 1) if L2 > 0 else 0.0
    dist2 = (xx - v.x0 - t * dx) ** 2 + (yy - v.y0 - t * dy) ** 2
    s = v.width / 4.0
    return np.exp(-dist2 / (2 * s * s))


def vessel_distance(size: int, v: Vessel) -> np.ndarray:
    """Distance of every pixel centre to the vessel's centre line segment."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = v.x1 - v.x0, v.y1 - v.y0
    L2 = dx * dx + dy * dy
    t = np.clip(((xx - v.x0) * dx + (yy - v.y0) * dy) / L2, 0, 1) if L2 > 0 else 0.0
    return np.hypot(xx - v.x0 - t * dx, yy - v.y0 - t * dy)


def render_intensity(spec: SceneSpec) -> np.ndarray:
    """The green-plane canvas in [0, 1] before quantization."""
    n = spec.size
    canvas = np.full((n, n), spec.level, dtype=np.float64)
    if spec.background == "gradient":
        canvas += spec.ramp * (np.arange(n)[None, :] / max(n - 1, 1) - 0.5)
    if spec.speckle > 0:
        rng = np.random.default_rng(spec.seed)
        noise = gaussian_filter(rng.uniform(-1.0, 1.0, (n, n)), 1.0, mode="reflect")
        canvas += spec.speckle * noise / max(noise.std(), 1e-12)
    for v in spec.vessels:
        canvas -= v.depth * _vessel_profile(n, v)
    for b in spec.blobs:
        canvas += (1 if b.bright else -1) * b.depth * _blob_profile(n, b)
    if spec.fov:
        yy, xx = np.mgrid[0:n, 0:n]
        c = (n - 1) / 2.0
        canvas[(xx - c) ** 2 + (yy - c) ** 2 > (0.48 * n) ** 2] = 0.0
    return np.clip(canvas, 0.0, 1.0)


def render(spec: SceneSpec):
    """Deterministic RGB image (uint8, H x W x 3) and its ground truth."""
    g = render_intensity(spec)
    rgb = np.stack([0.8 * g, g, 0.3 * g], axis=2)
    rgb = np.round(rgb * 255).astype(np.uint8)
    pts = np.array([(b.x, b.y, b.radius if b.shape != "ellipse" else max(b.a, b.b))
                    for b in spec.blobs if b.is_lesion], dtype=np.float64).reshape(-1, 3)
    return rgb, Truth(pts)


def random_scene(rng: np.random.Generator, size: int = 160, n_blobs: int = 5, n_vessels: int = 3,
                 speckle: float = 0.02, blob_radius=(6.0, 9.0), blob_depth=(0.2, 0.35),
                 vessel_width=(5.0, 8.0), vessel_depth=(0.2, 0.35), margin: int = 14,
                 min_gap: float = 12.0, n_bright: int = 0, n_blotches: int = 0,
                 bright_radius=(5.0, 9.0), blotch_radius=(10.0, 14.0),
                 seed: int | None = None) -> SceneSpec:
    """Random scene: straight vessels, `n_blobs` dark disc lesions kept off them,
    and optional unannotated distractors (bright spots and large dark blotches)."""
    vessels = []
    for _ in range(n_vessels):
        ang = rng.uniform(0, math.pi)
        cx, cy = rng.uniform(0.3 * size, 0.7 * size, 2)
        half = size  # long enough to cross the scene; clipped by the canvas
        vessels.append(Vessel(cx - half * math.cos(ang), cy - half * math.sin(ang),
                              cx + half * math.cos(ang), cy + half * math.sin(ang),
                              float(rng.uniform(*vessel_width)), float(rng.uniform(*vessel_depth))))
    dist = np.full((size, size), np.inf)
    for v in vessels:
        dist = np.minimum(dist, vessel_distance(size, v) - v.width / 2)
    blobs = []
    plan = [("lesion", blob_radius)] * n_blobs + [("bright", bright_radius)] * n_bright \
        + [("blotch", blotch_radius)] * n_blotches
    for kind, rad in plan:
        for _ in range(1000):
            x, y = rng.uniform(margin, size - 1 - margin, 2)
            r = float(rng.uniform(*rad))
            if dist[int(round(y)), int(round(x))] < min_gap:
                continue
            if any(math.hypot(x - b.x, y - b.y) < max(2 * min_gap, r + b.radius + min_gap)
                   for b in blobs):
                continue
            blobs.append(Blob(float(x), float(y), r, float(rng.uniform(*blob_depth)), shape="disc",
                              bright=kind == "bright", annotated=kind == "lesion"))
            break
    return SceneSpec(size=size, background="speckle", speckle=speckle, blobs=tuple(blobs),
                     vessels=tuple(vessels),
                     seed=int(rng.integers(2 ** 31)) if seed is None else seed)


def dataset_specs(n_images: int, seed: int = 0, size: int = 256, lesion_counts=(0, 0, 0, 1, 2),
                  n_bright: int = 45, n_blotches: int = 12, **kw) -> list[tuple[str, SceneSpec]]:
    """Reproducible list of ``(image_id, spec)`` for a mixed healthy/lesion dataset.

    Each image draws its lesion count uniformly from `lesion_counts`; the
    defaults give a majority of lesion-free images and plenty of
    lesion-like distractors, so non-lesion candidates heavily outnumber lesions.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_images):
        n = int(rng.choice(lesion_counts))
        spec = random_scene(rng, size=size, n_blobs=n, n_bright=n_bright, n_blotches=n_blotches, **kw)
        out.append((f"syn{k:04d}", spec))
    return out


# --- brute-force reference for the convergence filters ---------------------
# Written for clarity, not speed, and deliberately independent of madetect.lcf.

def _oracle_gradient(image: np.ndarray, sigma: float, truncation: float = 4.0):
    """Image gradient by direct 2-D convolution with sampled Gaussian derivatives."""
    img = np.asarray(image, dtype=np.float64)
    r = max(1, int(math.ceil(truncation * sigma)))
    u = np.arange(-r, r + 1, dtype=np.float64)
    vv, uu = np.meshgrid(u, u, indexing="ij")  # vv: row offset, uu: column offset
    g = np.exp(-(uu ** 2 + vv ** 2) / (2 * sigma ** 2)) / math.sqrt(2 * math.pi * sigma ** 2)
    kx = -uu / sigma ** 2 * g
    ky = -vv / sigma ** 2 * g
    pad = np.pad(img, r, mode="symmetric")
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for a in range(2 * r + 1):
        for b in range(2 * r + 1):
            # out(y, x) += k(v, u) * img(y - v, x - u)
            shifted = pad[2 * r - a: 2 * r - a + h, 2 * r - b: 2 * r - b + w]
            gx += kx[a, b] * shifted
            gy += ky[a, b] * shifted
    return gx, gy


def _oracle_correlate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Dense 2-D convolution with symmetric padding, written out pixel shift by pixel shift."""
    r = kernel.shape[0] // 2
    pad = np.pad(img, r, mode="symmetric")
    h, w = img.shape
    out = np.zeros((h, w))
    for a in range(2 * r + 1):
        for b in range(2 * r + 1):
            out += kernel[a, b] * pad[2 * r - a: 2 * r - a + h, 2 * r - b: 2 * r - b + w]
    return out


def oracle_weighted(image: np.ndarray, sigma: float, theta: float, truncation: float = 4.0) -> np.ndarray:
    """I_W from explicitly rotated 2-D derivative-of-Gaussian kernels."""
    img = np.asarray(image, dtype=np.float64)
    r = max(1, int(math.ceil(truncation * sigma)))
    u = np.arange(-r, r + 1, dtype=np.float64)
    yy, xx = np.meshgrid(u, u, indexing="ij")
    g = np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2)) / math.sqrt(2 * math.pi * sigma ** 2)
    along = xx * math.cos(theta) + yy * math.sin(theta)
    across = -xx * math.sin(theta) + yy * math.cos(theta)
    m = np.hypot(_oracle_correlate(img, -along / sigma ** 2 * g),
                 _oracle_correlate(img, -across / sigma ** 2 * g))
    return (1 - m * m) / (1 + m * m)


def _oracle_interp(a: np.ndarray, x: float, y: float) -> float:
    h, w = a.shape
    x0 = min(int(math.floor(x)), w - 2)
    y0 = min(int(math.floor(y)), h - 2)
    fx, fy = x - x0, y - y0
    return ((1 - fy) * ((1 - fx) * a[y0, x0] + fx * a[y0, x0 + 1])
            + fy * ((1 - fx) * a[y0 + 1, x0] + fx * a[y0 + 1, x0 + 1]))


def _first_best(values, tol=1e-9):
    top = max(values)
    for k, v in enumerate(values):
        if v >= top - tol:
            return k, v


def brute_ci(image: np.ndarray, point, cfg) -> dict:
    """Literal evaluation of the ARF, SBF and SEF at one point.

    `cfg` is a :class:`madetect.lcf.SupportConfig`.  The angle between the
    line direction ``theta_i`` and the gradient orientation
    ``alpha = atan2(dI/dx, dI/dy)`` is evaluated sample by sample.
    """
    gx, gy = _oracle_gradient(image, cfg.gradient_sigma)
    h, w = gx.shape
    x, y = float(point[0]), float(point[1])
    N, d = cfg.num_lines, cfg.band_width

    def cos_phi(i, m):
        if m == 0:
            return 0.0
        theta = 2 * math.pi * (i % N) / N
        sx, sy = x + m * math.sin(theta), y + m * math.cos(theta)
        if not (0 <= sx <= w - 1 and 0 <= sy <= h - 1):
            return 0.0
        dx, dy = _oracle_interp(gx, sx, sy), _oracle_interp(gy, sx, sy)
        if math.hypot(dx, dy) < 1e-12:
            return 0.0
        alpha = math.atan2(dx, dy)
        return math.cos(theta - alpha)

    table = [[cos_phi(i, m) for m in range(cfg.r_max + d)] for i in range(N)]

    def band(i, r):
        return sum(table[i % N][m] for m in range(r, r + d))

    arf_vals = [sum(band(i, r) for i in range(N)) / (N * d) for r in range(0, cfg.r_max + 1)]
    r_arf, f_arf = _first_best(arf_vals)

    radii = list(range(cfg.r_min, cfg.r_max + 1))
    sbf_best, sbf_r = [], []
    for i in range(N):
        k, v = _first_best([band(i, r) for r in radii])
        sbf_best.append(v / d)
        sbf_r.append(radii[k])
    f_sbf = sum(sbf_best) / N
    r_sbf = sum(sbf_r) / N

    weight_axis, weight_quad = (2, 4) if cfg.sef_normalization == "mean" else (1, 1)
    sef_vals, sef_r = [], []
    for j in range(N // 4):
        total = 0.0
        axis_radii = []
        for a, b in ((j, j + N // 2), (j + N // 4, j + 3 * N // 4)):
            k, v = _first_best([band(a, r) + band(b, r) for r in radii])
            total += weight_axis * v / (2 * d)
            axis_radii.append(radii[k])
        for i in range(1, N // 4):
            quad = (j + i, j - i + N // 2, j + i + N // 2, j - i + N)
            total += weight_quad * max(sum(band(q, r) for q in quad) for r in radii) / (4 * d)
        sef_vals.append(total / N)
        sef_r.append((axis_radii[0] + axis_radii[1]) / 2)
    j_best, f_sef = _first_best(sef_vals)
    return {"F_ARF": f_arf, "R_ARF": float(r_arf), "F_SBF": f_sbf, "R_SBF": r_sbf,
            "F_SEF": f_sef, "R_SEF": sef_r[j_best]}
