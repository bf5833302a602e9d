"""End-to-end wiring: configuration, per-image processing, training,
cross-validation, detection and batch runs over dataset directories."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import re
import xml.etree.ElementTree as ET
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import CONFIG_SCHEMA_VERSION
from .candidates import ExtractionConfig, extract_candidates
from .classifier import BoostConfig, TrainedEnsemble, rusboost_train
from .evaluation import (Annotation, Detection, EvaluationReport, GroundTruthSet, evaluate,
                         fold_assignment, write_detections_csv, read_detections_csv)
from .features import N_FEATURES, NormStats, extract_features, read_feature_csv, write_feature_csv
from .image import fov_mask, green_channel, load_image
from .lcf import SupportConfig
from .preprocess import PreprocessConfig, normalize
from .weighting import GradientConfig, aggregate

log = logging.getLogger(__name__)

THREADS_ENV = "MADETECT_THREADS"
ADAPTER_NAMES = ("generic", "roc", "eophtha")

FEATURE_SUBSETS = {
    "all": list(range(1, 30)),
    "gini12": [2, 4, 5, 6, 7, 13, 21, 22, 25, 26, 28, 29],
    "deviance12": [1, 2, 4, 5, 7, 17, 21, 22, 25, 26, 28, 29],
    "twoing12": [2, 4, 5, 7, 10, 21, 22, 24, 25, 26, 28, 29],
    "intensity": list(range(1, 8)),
    "shape": list(range(8, 18)),
    "lcf": list(range(18, 30)),
    "intensity+lcf": list(range(1, 8)) + list(range(18, 30)),
}


def feature_subset(name: str) -> list[int]:
    """1-based feature numbers of a named subset."""
    try:
        return list(FEATURE_SUBSETS[name])
    except KeyError:
        raise ValueError(f"unknown feature subset {name!r}; known: {sorted(FEATURE_SUBSETS)}") from None


class StageError(RuntimeError):
    """Failure inside one pipeline stage; `input_error` separates bad inputs from bugs."""

    def __init__(self, stage: str, message: str, input_error: bool = True):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.input_error = input_error


@contextmanager
def _stage(name):
    """Relabel errors raised inside the block with the stage name."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc), input_error=isinstance(exc, (ValueError, OSError))) from exc


_SECTIONS = {
    "preprocess": PreprocessConfig,
    "gradient": GradientConfig,
    "extraction": ExtractionConfig,
    "support": SupportConfig,
    "boost": BoostConfig,
}


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gradient: GradientConfig = field(default_factory=GradientConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    support: SupportConfig = field(default_factory=SupportConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    fov_threshold: float = 0.06
    feature_subset: str = "all"
    match_radius: float = 15.0
    adapter: str = "generic"
    cv_folds: int = 10
    cv_repetitions: int = 1
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self):
        feature_subset(self.feature_subset)
        if self.adapter not in ADAPTER_NAMES:
            raise ValueError(f"unknown adapter {self.adapter!r}; known: {', '.join(ADAPTER_NAMES)}")
        if self.match_radius <= 0:
            raise ValueError("match_radius must be positive")
        if self.cv_folds < 2 or self.cv_repetitions < 1:
            raise ValueError("need cv_folds >= 2 and cv_repetitions >= 1")
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"config schema {self.schema_version} != supported {CONFIG_SCHEMA_VERSION}")

    @classmethod
    def for_fov(cls, fov_diameter: float, **kw) -> "PipelineConfig":
        """Defaults with every length scaled from a ~2000 px field of view."""
        kw.setdefault("preprocess", PreprocessConfig.for_fov(fov_diameter))
        kw.setdefault("support", SupportConfig.for_fov(fov_diameter))
        kw.setdefault("match_radius", max(1.0, 15.0 * fov_diameter / 2000.0))
        return cls(**kw)

    @property
    def feature_indices(self) -> list[int]:
        """0-based columns of the feature matrix used by the classifier."""
        return [k - 1 for k in feature_subset(self.feature_subset)]

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "boost":
                v = v.to_dict()
            elif f.name in _SECTIONS:
                v = {k: list(x) if isinstance(x, tuple) else x for k, x in dataclasses.asdict(v).items()}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in _SECTIONS:
                if not isinstance(v, dict):
                    raise ValueError(f"config section {k!r} must be a mapping")
                sec = _SECTIONS[k]
                if sec is BoostConfig:
                    kw[k] = BoostConfig.from_dict(v)
                    continue
                bad = set(v) - {f.name for f in dataclasses.fields(sec)}
                if bad:
                    raise ValueError(f"unknown keys in {k!r}: {sorted(bad)}")
                kw[k] = sec(**{a: tuple(b) if isinstance(b, list) else b for a, b in v.items()})
            else:
                kw[k] = v
        return cls(**kw)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ImageResult:
    mask: np.ndarray
    normalized: np.ndarray
    weighted: np.ndarray
    candidates: list
    features: np.ndarray

    @property
    def centroids(self) -> np.ndarray:
        return np.array([c.centroid for c in self.candidates], dtype=np.float64).reshape(-1, 2)


def process_image(rgb: np.ndarray, cfg: PipelineConfig = PipelineConfig()) -> ImageResult:
    """Preprocess, weight, extract candidates and compute their 29 features."""
    with _stage("preprocess"):
        mask = fov_mask(rgb, cfg.fov_threshold)
        norm = normalize(green_channel(rgb), mask, cfg.preprocess)
    with _stage("weight"):
        w = aggregate(norm, cfg.gradient)
    with _stage("candidates"):
        cands = extract_candidates(w.per_scale, cfg.extraction, mask)
        # drop candidates whose centroid falls outside the FOV
        cands = [c for c in cands if mask[int(round(c.centroid[1])), int(round(c.centroid[0]))]]
    with _stage("features"):
        X = extract_features(norm, w.total, cands, cfg.support, mask)
    return ImageResult(mask, norm, w.total, cands, X)


def label_candidates(centroids: np.ndarray, annotations, match_radius: float) -> np.ndarray:
    """+1 for centroids within reach of an annotation, -1 otherwise."""
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    lab = -np.ones(len(centroids), dtype=int)
    for a in annotations:
        r = max(match_radius, a.radius or 0.0)
        d2 = (centroids[:, 0] - a.x) ** 2 + (centroids[:, 1] - a.y) ** 2
        lab[d2 <= r * r] = 1
    return lab


@dataclass
class ImageFeatures:
    image_id: str
    centroids: np.ndarray
    X: np.ndarray
    labels: np.ndarray
    annotations: list = field(default_factory=list)


def image_features(image_id, rgb, annotations, cfg: PipelineConfig) -> ImageFeatures:
    r = process_image(rgb, cfg)
    return ImageFeatures(str(image_id), r.centroids, r.features,
                         label_candidates(r.centroids, annotations, cfg.match_radius), list(annotations))


def train_model(X: np.ndarray, labels: np.ndarray, cfg: PipelineConfig = PipelineConfig()) -> TrainedEnsemble:
    """Fit normalization on `X`, then boost on the configured feature subset."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected an n x {N_FEATURES} feature matrix")
    stats = NormStats.fit(X)
    idx = cfg.feature_indices
    ens = rusboost_train(stats.apply(X)[:, idx], labels, cfg.boost)
    ens.norm_stats = stats
    ens.feature_indices = idx
    return ens


def detections_for(ens: TrainedEnsemble, image_id: str, centroids, X) -> list[Detection]:
    if len(X) == 0:
        return []
    scores = ens.predict_proba(X)
    return [Detection(image_id, float(c[0]), float(c[1]), float(s)) for c, s in zip(centroids, scores)]


def detect(rgb: np.ndarray, ens: TrainedEnsemble, cfg: PipelineConfig = PipelineConfig(),
           image_id: str = "image"):
    """Score every candidate of one image.

    Returns (detections, heat) where `heat` holds each candidate's score on
    its pixels and 0 elsewhere.
    """
    r = process_image(rgb, cfg)
    with _stage("classify"):
        dets = detections_for(ens, image_id, r.centroids, r.features)
    heat = np.zeros(r.mask.shape)
    for c, d in zip(r.candidates, dets):
        heat[c.ys, c.xs] = np.maximum(heat[c.ys, c.xs], d.score)
    return dets, heat


@dataclass
class CVResult:
    detections: list          # pooled over folds (last repetition)
    report: EvaluationReport  # of the pooled detections (last repetition)
    folds: list               # per repetition, the list of fold index arrays
    f_score: float            # averaged over repetitions
    f_auc: float
    auc: float | None


def cross_validate(table: list[ImageFeatures], cfg: PipelineConfig = PipelineConfig(),
                   k: int | None = None, seed: int = 0, repetitions: int | None = None) -> CVResult:
    """Image-level k-fold cross-validation over precomputed per-image features."""
    k = cfg.cv_folds if k is None else k
    repetitions = cfg.cv_repetitions if repetitions is None else repetitions
    truth = GroundTruthSet({t.image_id: t.annotations for t in table})
    scores, fauc, aucs, all_folds = [], [], [], []
    for rep in range(repetitions):
        folds = fold_assignment(len(table), k, seed + rep)
        all_folds.append(folds)
        dets = []
        for test in folds:
            test_set = set(test.tolist())
            train = [t for i, t in enumerate(table) if i not in test_set]
            X = np.vstack([t.X for t in train])
            y = np.concatenate([t.labels for t in train])
            ens = train_model(X, y, cfg)
            for i in test:
                t = table[i]
                dets.extend(detections_for(ens, t.image_id, t.centroids, t.X))
        report = evaluate(dets, truth, cfg.match_radius)
        scores.append(report.f_score)
        fauc.append(report.f_auc)
        if report.auc is not None:
            aucs.append(report.auc)
    return CVResult(dets, report, all_folds, float(np.mean(scores)), float(np.mean(fauc)),
                    float(np.mean(aucs)) if aucs else None)


# --- dataset adapters --------------------------------------------------------

@dataclass
class DatasetItem:
    image_id: str
    path: Path
    annotations: list


IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


def _images_in(folder: Path):
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def generic_adapter(root: Path) -> list[DatasetItem]:
    """``images/`` with PNG/PPM files and an optional ``truth.csv``."""
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise ValueError(f"{root}: generic layout needs an images/ directory")
    truth = GroundTruthSet()
    if (root / "truth.csv").exists():
        truth = GroundTruthSet.from_csv(root / "truth.csv")
    return [DatasetItem(p.stem, p, truth.images.get(p.stem, [])) for p in _images_in(img_dir)]


def _xml_number(el, *names):
    for n in names:
        for child in el.iter():
            if child.tag.lower() == n and child.text and child.text.strip():
                return float(child.text)
    return None


def parse_roc_xml(path: Path) -> dict:
    """Annotations per image stem from a ROC-style XML file.

    The parser is tolerant: it accepts any element carrying an image
    reference attribute and nested ``x``/``y``/``radius`` elements.
    """
    out: dict = {}
    tree = ET.parse(path)
    for el in tree.iter():
        ref = next((v for k, v in el.attrib.items() if k.lower() in ("imageid", "image", "name", "id")), None)
        if ref is None:
            continue
        stem = Path(ref).stem
        anns = out.setdefault(stem, [])
        for a in el.iter():
            if a is el or a.tag.lower() not in ("annotation", "lesion", "ma"):
                continue
            x, y = _xml_number(a, "x"), _xml_number(a, "y")
            if x is None or y is None:
                continue
            anns.append(Annotation(x, y, _xml_number(a, "radius", "r")))
    return out


def roc_adapter(root: Path) -> list[DatasetItem]:
    """Images anywhere under `root` plus one or more annotation XML files."""
    xmls = sorted(root.rglob("*.xml"))
    if not xmls:
        raise ValueError(f"{root}: ROC layout needs an annotation .xml file")
    anns: dict = {}
    for x in xmls:
        try:
            for k, v in parse_roc_xml(x).items():
                anns.setdefault(k, []).extend(v)
        except ET.ParseError as exc:
            raise ValueError(f"{x}: malformed XML ({exc})") from None
    imgs = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not imgs:
        raise ValueError(f"{root}: no PNG/PPM images found")
    return [DatasetItem(p.stem, p, anns.get(p.stem, [])) for p in imgs]


def mask_annotations(mask: np.ndarray) -> list[Annotation]:
    """One annotation per connected lesion in a binary mask (centroid, equivalent radius)."""
    lab, n = ndimage.label(mask > 0, structure=np.ones((3, 3)))
    out = []
    for k in range(1, n + 1):
        ys, xs = np.nonzero(lab == k)
        out.append(Annotation(float(xs.mean()), float(ys.mean()), float(np.sqrt(xs.size / np.pi))))
    return out


def eophtha_adapter(root: Path) -> list[DatasetItem]:
    """``MA/`` (and optionally ``healthy/``) images with ``Annotation_MA/`` lesion masks."""
    ma_dir = root / "MA"
    ann_dir = root / "Annotation_MA"
    if not ma_dir.is_dir() or not ann_dir.is_dir():
        raise ValueError(f"{root}: e-ophtha layout needs MA/ and Annotation_MA/ directories")
    masks = {p.stem: p for p in _images_in(ann_dir)}
    items = []
    for p in _images_in(ma_dir):
        anns = []
        if p.stem in masks:
            m = load_image(masks[p.stem])
            anns = mask_annotations(m.max(axis=2) > 127)
        items.append(DatasetItem(p.stem, p, anns))
    if (root / "healthy").is_dir():
        items += [DatasetItem(p.stem, p, []) for p in _images_in(root / "healthy")]
    return items


ADAPTERS = {"generic": generic_adapter, "roc": roc_adapter, "eophtha": eophtha_adapter}


def load_dataset(root, adapter: str) -> list[DatasetItem]:
    if adapter not in ADAPTERS:
        raise ValueError(f"unknown adapter {adapter!r}; known: {', '.join(sorted(ADAPTERS))}")
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset directory {root} does not exist")
    return ADAPTERS[adapter](root)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _safe_name(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", image_id)


def _features_for_item(item: DatasetItem, cfg: PipelineConfig, feat_dir: Path) -> ImageFeatures:
    """Load cached per-image features or compute and cache them."""
    path = feat_dir / f"{_safe_name(item.image_id)}.csv"
    if path.exists():
        _, cents, X, labels = read_feature_csv(path)
        if labels is None:
            labels = label_candidates(cents, item.annotations, cfg.match_radius)
        return ImageFeatures(item.image_id, cents, X, labels, item.annotations)
    with _stage("load"):
        rgb = load_image(item.path)
    f = image_features(item.image_id, rgb, item.annotations, cfg)
    tmp = path.with_suffix(".tmp")
    write_feature_csv(tmp, f.X, f.centroids, f.labels)
    os.replace(tmp, path)  # atomic, so an interrupted run never leaves half a file
    return f


def run_dataset(root, out_dir, cfg: PipelineConfig = PipelineConfig(), model: TrainedEnsemble | None = None,
                seed: int = 0, adapter: str | None = None) -> EvaluationReport | None:
    """Process a dataset directory into per-image features, detections and one report.

    With a `model` every image is scored by it; without one, detections
    come from image-level cross-validation.  Per-image feature files are
    reused when present, so an interrupted run can be resumed.
    """
    items = load_dataset(root, adapter or cfg.adapter)
    if not items:
        raise ValueError(f"{root}: dataset contains no images")
    out = Path(out_dir)
    feat_dir, det_dir = out / "features", out / "detections"
    feat_dir.mkdir(parents=True, exist_ok=True)
    det_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(_thread_count()) as pool:
        table = list(pool.map(lambda it: _features_for_item(it, cfg, feat_dir), items))
    if model is not None:
        dets = [d for t in table for d in detections_for(model, t.image_id, t.centroids, t.X)]
    else:
        k = min(cfg.cv_folds, len(table))
        dets = cross_validate(table, cfg, k=k, seed=seed, repetitions=1).detections
    for t in table:
        write_detections_csv(det_dir / f"{_safe_name(t.image_id)}.csv",
                             [d for d in dets if d.image_id == t.image_id])
    truth = GroundTruthSet({t.image_id: t.annotations for t in table})
    truth.to_csv(out / "truth.csv")
    if truth.n_annotations == 0:
        log.warning("no annotations; skipping the evaluation report")
        return None
    report = evaluate(dets, truth, cfg.match_radius)
    report.save(out / "report.json")
    report.curve.to_csv(out / "froc.csv")
    return report


def read_detection_dir(det_dir) -> list[Detection]:
    return [d for p in sorted(Path(det_dir).glob("*.csv")) for d in read_detections_csv(p)]


__all__ = [
    "ADAPTERS", "CVResult", "FEATURE_SUBSETS", "ImageFeatures", "ImageResult", "PipelineConfig",
    "StageError", "cross_validate", "detect", "feature_subset", "image_features", "label_candidates",
    "load_dataset", "process_image", "run_dataset", "train_model"
]
