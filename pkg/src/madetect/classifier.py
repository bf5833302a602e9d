"""Weighted CART trees boosted with random undersampling (RUSBoost).

Labels are +1 (lesion) and -1 (background) throughout.  Trees grow best
first: the open node whose best split removes the most weighted risk is
split next, until the split budget is spent or no split helps.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import NormStats

CRITERIA = ("gini", "deviance", "twoing")
MODEL_MAGIC = "madetect-rusboost"
MODEL_VERSION = 1
EPS_FLOOR = 1e-10
# splits must beat this (relative to node weight) to count as a gain
GAIN_TOL = 1e-12


def impurity(criterion: str, p) -> float:
    """Node impurity of class fractions `p` (gini or deviance).

    For ``"twoing"`` pass ``p = (left_fractions, right_fractions, P_L, P_R)``
    and the split value is returned instead.
    """
    if criterion == "gini":
        p = np.asarray(p, dtype=np.float64)
        return float(1.0 - np.sum(p * p))
    if criterion == "deviance":
        p = np.asarray(p, dtype=np.float64)
        nz = p[p > 0]
        return float(-np.sum(nz * np.log(nz)))
    if criterion == "twoing":
        left, right, pl, pr = p
        diff = np.sum(np.abs(np.asarray(left, float) - np.asarray(right, float)))
        return float(pl * pr * diff * diff)
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def _risk(criterion, wp, wn):
    """Weight times impurity for two-class weight totals (vectorized)."""
    w = wp + wn
    safe = np.where(w > 0, w, 1.0)
    if criterion == "gini":
        return np.where(w > 0, 2.0 * wp * wn / safe, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(wp > 0, wp * np.log(np.where(wp > 0, wp, 1.0) / safe), 0.0)
        tn = np.where(wn > 0, wn * np.log(np.where(wn > 0, wn, 1.0) / safe), 0.0)
    return -(tp + tn)


def _split_scores(criterion, lp, ln, tp, tn):
    """Risk reduction (gini/deviance) or node-weighted twoing value per split."""
    rp, rn = tp - lp, tn - ln
    if criterion == "twoing":
        wl, wr = lp + ln, rp + rn
        wt = tp + tn
        sl = np.where(wl > 0, wl, 1.0)
        sr = np.where(wr > 0, wr, 1.0)
        diff = np.abs(lp / sl - rp / sr) + np.abs(ln / sl - rn / sr)
        val = (wl / wt) * (wr / wt) * diff * diff
        return np.where((wl > 0) & (wr > 0), wt * val, 0.0)
    return _risk(criterion, tp, tn) - _risk(criterion, lp, ln) - _risk(criterion, rp, rn)


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature >= 0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.intp)
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            go_left = X[rows, f[active]] <= self.threshold[node[active]]
            node[rows] = np.where(go_left, self.left[node[active]], self.right[node[active]])
        return self.value[node].astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": [float(v) for v in self.gain],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(np.asarray(d["feature"], dtype=np.intp), np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.intp), np.asarray(d["right"], dtype=np.intp),
                   np.asarray(d["value"], dtype=np.intp), np.asarray(d["gain"], dtype=np.float64))


def _best_split(X, y, w, idx, criterion):
    """(score, feature, threshold) of the best split of node `idx`, or None."""
    if idx.size < 2:
        return None
    Xn = X[idx]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, 0)
    wp = np.where(y[idx] > 0, w[idx], 0.0)[order]
    wn = np.where(y[idx] > 0, 0.0, w[idx])[order]
    cp = np.cumsum(wp, axis=0)
    cn = np.cumsum(wn, axis=0)
    tp, tn = cp[-1], cn[-1]
    if tp[0] <= 0 or tn[0] <= 0:
        return None
    scores = _split_scores(criterion, cp[:-1], cn[:-1], tp, tn)
    valid = xs[1:] > xs[:-1]
    scores = np.where(valid, scores, -np.inf)
    # first maximum in (feature, position) order, scanning features first
    flat = np.argmax(scores.T)
    f, k = divmod(int(flat), scores.shape[0])
    best = scores[k, f]
    if not np.isfinite(best) or best <= GAIN_TOL * (tp[0] + tn[0]):
        return None
    thr = 0.5 * (xs[k, f] + xs[k + 1, f])
    if not np.isfinite(thr) or thr >= xs[k + 1, f]:
        thr = xs[k, f]
    return float(best), f, float(thr)


def train_tree(X, y, weights=None, max_splits: int = 100, criterion: str = "gini") -> DecisionTree:
    """Grow one weighted classification tree, best split first."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty training data")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    if max_splits < 1:
        raise ValueError("max_splits must be >= 1")
    n = len(X)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    feature, threshold, left, right, value, gain = [], [], [], [], [], []
    members = []

    def new_node(idx):
        wp = w[idx][y[idx] > 0].sum()
        wn = w[idx][y[idx] <= 0].sum()
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(1 if wp > wn else -1)
        gain.append(0.0)
        members.append(idx)
        return len(feature) - 1

    heap = []

    def push(node):
        s = _best_split(X, y, w, members[node], criterion)
        if s is not None:
            heapq.heappush(heap, (-s[0], node, s[1], s[2]))

    push(new_node(np.arange(n)))
    splits = 0
    while heap and splits < max_splits:
        neg, node, f, thr = heapq.heappop(heap)
        idx = members[node]
        go = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        gain[node] = -neg
        left[node] = new_node(idx[go])
        right[node] = new_node(idx[~go])
        members[node] = None
        splits += 1
        push(left[node])
        push(right[node])
    return DecisionTree(np.asarray(feature, dtype=np.intp), np.asarray(threshold),
                        np.asarray(left, dtype=np.intp), np.asarray(right, dtype=np.intp),
                        np.asarray(value, dtype=np.intp), np.asarray(gain))


@dataclass(frozen=True)
class BoostConfig:
    num_rounds: int = 1000
    max_splits: int = 100
    learning_rate: float = 0.5
    split_criterion: str = "gini"
    rng_seed: int = 0
    # majority:minority ratio of each round's subset; inf disables undersampling
    target_class_ratio: float = 1.0
    max_retries: int = 5

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if self.max_splits < 1:
            raise ValueError("max_splits must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.split_criterion not in CRITERIA:
            raise ValueError(f"split_criterion must be one of {CRITERIA}")
        if not self.target_class_ratio > 0:
            raise ValueError("target_class_ratio must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["target_class_ratio"]):
            d["target_class_ratio"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoostConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown classifier keys: {sorted(unknown)}")
        if "target_class_ratio" in d:
            d["target_class_ratio"] = float(d["target_class_ratio"])
        return cls(**d)


def alpha_from_error(eps: float) -> float:
    """Vote weight of a weak learner with weighted error `eps` (before shrinkage)."""
    if eps >= 0.5:
        return 0.0
    eps = max(eps, EPS_FLOOR)
    return 0.5 * math.log((1.0 - eps) / eps)


@dataclass
class TrainedEnsemble:
    trees: list
    alphas: list
    config: BoostConfig = field(default_factory=BoostConfig)
    norm_stats: NormStats | None = None
    feature_indices: list | None = None  # columns of the 29-feature matrix used
    errors: list = field(default_factory=list)

    def _select(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        if self.norm_stats is not None:
            if X.shape[1] != self.norm_stats.mean.size:
                raise ValueError(f"expected {self.norm_stats.mean.size} features, got {X.shape[1]}")
            X = self.norm_stats.apply(X)
        if self.feature_indices is not None:
            X = X[:, self.feature_indices]
        return X

    def decision(self, X) -> np.ndarray:
        """H(x) in [-1, 1]: alpha-weighted vote divided by the alpha total."""
        X = self._select(X)
        total = float(np.sum(self.alphas))
        h = np.zeros(len(X))
        for a, t in zip(self.alphas, self.trees):
            if a:
                h += a * t.predict(X)
        return np.clip(h / total, -1.0, 1.0) if total > 0 else h

    def predict_proba(self, X) -> np.ndarray:
        return (self.decision(X) + 1.0) / 2.0

    def to_dict(self) -> dict:
        from . import CONFIG_SCHEMA_VERSION
        return {
            "magic": MODEL_MAGIC,
            "version": MODEL_VERSION,
            "schema_version": CONFIG_SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
            "feature_indices": self.feature_indices,
            "alphas": [float(a) for a in self.alphas],
            "errors": [float(e) for e in self.errors],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedEnsemble":
        from . import CONFIG_SCHEMA_VERSION
        if d.get("magic") != MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        if d.get("version") != MODEL_VERSION or d.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"model format {d.get('version')} / config schema {d.get('schema_version')} "
                             f"does not match supported {MODEL_VERSION} / {CONFIG_SCHEMA_VERSION}")
        ns = d.get("norm_stats")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            alphas=[float(a) for a in d["alphas"]],
            config=BoostConfig.from_dict(d["config"]),
            norm_stats=None if ns is None else NormStats.from_dict(ns),
            feature_indices=d.get("feature_indices"),
            errors=[float(e) for e in d.get("errors", [])],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainedEnsemble":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"model file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)


def _undersample(rng, y, w, ratio):
    """Indices of all minority samples plus a weighted draw of the majority."""
    pos = np.nonzero(y > 0)[0]
    neg = np.nonzero(y <= 0)[0]
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    if math.isinf(ratio):
        return np.arange(len(y))
    k = min(len(majority), max(1, int(round(ratio * len(minority)))))
    if k == len(majority):
        return np.arange(len(y))
    p = w[majority] / w[majority].sum()
    pick = rng.choice(len(majority), size=k, replace=False, p=p)
    return np.sort(np.concatenate([minority, majority[pick]]))


def rusboost_train(X, y, cfg: BoostConfig = BoostConfig(), callback=None) -> TrainedEnsemble:
    """Boost `cfg.num_rounds` trees, each trained on an undersampled subset.

    The weighted error and the weight update use the full training set.
    `callback(t, tree, eps, alpha, weights)` is called after every round.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.where(np.asarray(y) > 0, 1, -1)
    if len(X) != len(y) or len(X) == 0:
        raise ValueError("features and labels must be non-empty and of equal length")
    if (y > 0).all() or (y < 0).all():
        raise ValueError("training data must contain both classes")
    rng = np.random.default_rng(cfg.rng_seed)
    m = len(y)
    w = np.full(m, 1.0 / m)
    trees, alphas, errors = [], [], []
    undersampling = not math.isinf(cfg.target_class_ratio)
    for t in range(cfg.num_rounds):
        for _ in range(cfg.max_retries + 1):
            sub = _undersample(rng, y, w, cfg.target_class_ratio)
            ws = w[sub] / w[sub].sum() if undersampling else w
            tree = train_tree(X[sub], y[sub], ws, cfg.max_splits, cfg.split_criterion)
            pred = tree.predict(X)
            eps = float(np.sum(w[pred != y]))
            if eps < 0.5 or not undersampling:
                break
        alpha = cfg.learning_rate * alpha_from_error(eps)
        w = w * np.exp(-alpha * y * pred)
        w = w / w.sum()
        trees.append(tree)
        alphas.append(alpha)
        errors.append(eps)
        if callback is not None:
            callback(t, tree, eps, alpha, w)
    return TrainedEnsemble(trees, alphas, cfg, errors=errors)


def feature_importance(ensemble: TrainedEnsemble, n_features: int | None = None) -> np.ndarray:
    """Split-gain importance per feature divided by the total number of branch nodes.

    When the ensemble was trained on a feature subset, importances are
    reported on the full feature index space with zeros elsewhere.
    """
    idx = ensemble.feature_indices
    if n_features is None:
        if ensemble.norm_stats is not None:
            n_features = ensemble.norm_stats.mean.size
        elif idx is not None:
            n_features = max(idx) + 1
        else:
            n_features = max((int(t.feature.max()) for t in ensemble.trees), default=-1) + 1
    imp = np.zeros(n_features)
    branches = 0
    for t in ensemble.trees:
        inner = t.feature >= 0
        branches += int(inner.sum())
        cols = t.feature[inner]
        if idx is not None:
            cols = np.asarray(idx)[cols]
        np.add.at(imp, cols, t.gain[inner])
    return imp / branches if branches else imp
