"""Lesion-level FROC analysis and image-level ROC AUC."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

FROC_FPIS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
FAUC_RANGE = (0.125, 8.0)


@dataclass
class Detection:
    image_id: str
    x: float
    y: float
    score: float


@dataclass
class Annotation:
    x: float
    y: float
    radius: float | None = None


@dataclass
class GroundTruthSet:
    """Annotations per image id; images without lesions map to an empty list."""
    images: dict = field(default_factory=dict)

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_annotations(self) -> int:
        return sum(len(v) for v in self.images.values())

    def image_label(self, image_id) -> int:
        return 1 if self.images.get(image_id) else 0

    @classmethod
    def from_csv(cls, path, image_ids=None) -> "GroundTruthSet":
        """Rows ``image_id, x, y[, radius]``; `image_ids` adds lesion-free images."""
        images = {str(i): [] for i in (image_ids or [])}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                r = row.get("radius")
                images.setdefault(row["image_id"], [])
                if row.get("x", "") == "":
                    continue
                images[row["image_id"]].append(
                    Annotation(float(row["x"]), float(row["y"]), float(r) if r not in (None, "") else None))
        return cls(images)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "x", "y", "radius"])
            for iid, anns in self.images.items():
                if not anns:
                    w.writerow([iid, "", "", ""])
                for a in anns:
                    w.writerow([iid, a.x, a.y, "" if a.radius is None else a.radius])


def match(detections, annotations, match_radius: float):
    """Greedy one-to-one matching within one image, highest score first.

    Returns (is_tp per detection in input order, hit flag per annotation).
    """
    dets = list(detections)
    anns = list(annotations)
    tp = np.zeros(len(dets), dtype=bool)
    hit = np.zeros(len(anns), dtype=bool)
    if not dets or not anns:
        return tp, hit
    ax = np.array([a.x for a in anns])
    ay = np.array([a.y for a in anns])
    ar = np.array([max(match_radius, a.radius or 0.0) for a in anns])
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    for k in order:
        d2 = (ax - dets[k].x) ** 2 + (ay - dets[k].y) ** 2
        ok = (~hit) & (d2 <= ar * ar)
        if ok.any():
            j = int(np.argmin(np.where(ok, d2, np.inf)))
            hit[j] = True
            tp[k] = True
    return tp, hit


@dataclass
class FrocCurve:
    """Operating points sorted by descending threshold."""
    thresholds: np.ndarray
    fpi: np.ndarray
    sensitivity: np.ndarray

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpi.tolist(), self.sensitivity.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpi", "sensitivity"])
            w.writerows(self.points())


def _score_outcomes(detections, truth: GroundTruthSet, match_radius):
    """(score, is_tp) for every detection, matched per image."""
    by_image: dict = {}
    for d in detections:
        by_image.setdefault(d.image_id, []).append(d)
    scores, tps = [], []
    for iid, dets in by_image.items():
        tp, _ = match(dets, truth.images.get(iid, []), match_radius)
        scores.extend(d.score for d in dets)
        tps.extend(tp.tolist())
    return np.asarray(scores, dtype=np.float64), np.asarray(tps, dtype=bool)


def froc(detections, truth: GroundTruthSet, match_radius: float) -> FrocCurve:
    """Sensitivity against false positives per image over all distinct score thresholds.

    Matching is done once at the lowest threshold; since it runs in descending
    score order, the outcome of each detection does not depend on the threshold.
    """
    if truth.n_annotations == 0:
        raise ValueError("ground truth has zero annotations")
    scores, tps = _score_outcomes(detections, truth, match_radius)
    n_img = max(truth.n_images, len({d.image_id for d in detections}))
    if scores.size == 0:
        return FrocCurve(np.array([np.inf]), np.array([0.0]), np.array([0.0]))
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], tps[order]
    ctp = np.cumsum(t)
    cfp = np.cumsum(~t)
    last = np.r_[s[1:] != s[:-1], True]
    thr = s[last]
    return FrocCurve(np.r_[np.inf, thr], np.r_[0.0, cfp[last] / n_img],
                     np.r_[0.0, ctp[last] / truth.n_annotations])


def _curve_xy(curve: FrocCurve):
    x = np.r_[0.0, curve.fpi]
    y = np.r_[0.0, curve.sensitivity]
    return x, y


def sensitivity_at(curve: FrocCurve, fpi: float) -> float:
    """Linear interpolation from (0, 0); the last sensitivity holds beyond the curve."""
    x, y = _curve_xy(curve)
    if fpi >= x[-1]:
        return float(y[-1])
    # for duplicated FPI values take the highest sensitivity reached at that FPI
    k = int(np.searchsorted(x, fpi, side="right"))
    x0, y0, x1, y1 = x[k - 1], y[k - 1], x[k], y[k]
    if x1 == x0:
        return float(y1)
    return float(y0 + (y1 - y0) * (fpi - x0) / (x1 - x0))


def froc_score(curve: FrocCurve, fpis=FROC_FPIS) -> float:
    """Mean sensitivity at the seven reference FPIs."""
    return float(np.mean([sensitivity_at(curve, f) for f in fpis]))


def froc_score_from_sensitivities(values) -> float:
    return float(np.mean(values))


def froc_partial_auc(curve: FrocCurve, lo: float = FAUC_RANGE[0], hi: float = FAUC_RANGE[1]) -> float:
    """Trapezoid area under sensitivity over FPI in [lo, hi], divided by hi."""
    x, y = _curve_xy(curve)
    inner = x[(x > lo) & (x < hi)]
    xs = np.r_[lo, inner, hi]
    ys = np.array([sensitivity_at(curve, v) for v in xs])
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0) / hi)


def image_roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative images")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def image_scores(detections, image_ids) -> dict:
    """Highest candidate score per image, 0 for images without detections."""
    out = {str(i): 0.0 for i in image_ids}
    for d in detections:
        out[d.image_id] = max(out.get(d.image_id, 0.0), d.score)
    return out


@dataclass
class EvaluationReport:
    curve: FrocCurve
    f_score: float
    f_auc: float
    auc: float | None
    sensitivities: dict

    def to_dict(self) -> dict:
        return {
            "f_score": self.f_score,
            "f_auc": self.f_auc,
            "auc": self.auc,
            "sensitivity_at_fpi": self.sensitivities,
            "curve": [{"threshold": t if np.isfinite(t) else None, "fpi": f, "sensitivity": s}
                      for t, f, s in self.curve.points()],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def evaluate(detections, truth: GroundTruthSet, match_radius: float) -> EvaluationReport:
    detections = list(detections)
    curve = froc(detections, truth, match_radius)
    sens = {str(f): sensitivity_at(curve, f) for f in FROC_FPIS}
    img = image_scores(detections, truth.images.keys())
    labels = [truth.image_label(i) for i in img]
    auc = image_roc_auc(list(img.values()), labels) if 0 < sum(labels) < len(labels) else None
    return EvaluationReport(curve, froc_score(curve), froc_partial_auc(curve), auc, sens)


def read_detections_csv(path) -> list[Detection]:
    with open(path, newline="") as fh:
        return [Detection(r["image_id"], float(r["x"]), float(r["y"]), float(r["score"]))
                for r in csv.DictReader(fh)]


def write_detections_csv(path, detections) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "x", "y", "score"])
        for d in detections:
            w.writerow([d.image_id, repr(float(d.x)), repr(float(d.y)), repr(float(d.score))])


def fold_assignment(n_images: int, k: int, seed: int) -> list[np.ndarray]:
    """Random partition of image indices into `k` folds of near-equal size."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n_images < k:
        raise ValueError(f"{n_images} images cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n_images)
    return [np.sort(f) for f in np.array_split(perm, k)]


def cross_validate(table, cfg=None, k=None, seed: int = 0, repetitions=None):
    """Image-level k-fold cross-validation; see :func:`madetect.pipeline.cross_validate`."""
    from .pipeline import PipelineConfig, cross_validate as _cv  # deferred: pipeline imports this module
    return _cv(table, cfg or PipelineConfig(), k=k, seed=seed, repetitions=repetitions)
