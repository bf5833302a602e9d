import json

import numpy as np
import pytest
from PIL import Image

from madetect import pipeline as P
from madetect import synthetic as S
from madetect.classifier import BoostConfig, TrainedEnsemble
from madetect.evaluation import Annotation, GroundTruthSet, match
from madetect.features import NormStats

FAST = BoostConfig(num_rounds=100, max_splits=20)


def scene(rng, n_blobs):
    return S.random_scene(rng, n_blobs=n_blobs, n_bright=10, n_blotches=3)


def annotations(truth):
    return [Annotation(*p) for p in truth.points]


@pytest.fixture(scope="module")
def cfg():
    return P.PipelineConfig(match_radius=5.0, boost=FAST)


@pytest.fixture(scope="module")
def table(cfg):
    rng = np.random.default_rng(3)
    out = []
    for k in range(30):
        rgb, truth = S.render(scene(rng, 5 if k % 2 else 0))
        out.append(P.image_features(f"t{k}", rgb, annotations(truth), cfg))
    return out


@pytest.fixture(scope="module")
def model(table, cfg):
    X = np.vstack([t.X for t in table])
    y = np.concatenate([t.labels for t in table])
    return P.train_model(X, y, cfg)


# --- feature subsets and config -------------------------------------------------

def test_named_subsets():
    assert P.feature_subset("intensity") == list(range(1, 8))
    assert P.feature_subset("all") == list(range(1, 30))
    assert P.feature_subset("gini12") == [2, 4, 5, 6, 7, 13, 21, 22, 25, 26, 28, 29]
    with pytest.raises(ValueError, match="unknown feature subset"):
        P.feature_subset("best")


def test_config_round_trip(tmp_path):
    c = P.PipelineConfig.for_fov(640, feature_subset="lcf", boost=BoostConfig(target_class_ratio=float("inf")))
    c.save(tmp_path / "c.json")
    back = P.PipelineConfig.load(tmp_path / "c.json")
    assert back == c and back.feature_indices == list(range(17, 29))


@pytest.mark.parametrize("patch", [{"colour": 1}, {"support": {"num_lines": 16, "spokes": 3}},
                                   {"boost": {"trees": 5}}, {"schema_version": 99}, {"adapter": "drive"}])
def test_config_rejects_bad_input(patch):
    d = P.PipelineConfig().to_dict()
    d.update(patch)
    with pytest.raises(ValueError):
        P.PipelineConfig.from_dict(d)


def test_unknown_adapter_lists_known():
    with pytest.raises(ValueError, match="eophtha.*generic.*roc"):
        P.load_dataset(".", "drive")


# --- per image ------------------------------------------------------------------

def test_candidate_labels():
    lab = P.label_candidates(np.array([[10, 10], [30, 30], [14, 10]]), [Annotation(10, 10), Annotation(40, 40, 15)], 4)
    assert lab.tolist() == [1, 1, 1]
    assert P.label_candidates(np.array([[10, 15]]), [Annotation(10, 10)], 4).tolist() == [-1]


def test_process_image_centroids_in_fov(cfg):
    rgb, _ = S.render(S.SceneSpec(size=120, fov=True, blobs=(S.Blob(60, 60, 7, shape="disc"),)))
    r = P.process_image(rgb, cfg)
    assert r.features.shape == (len(r.candidates), 29)
    assert all(r.mask[round(y), round(x)] for x, y in r.centroids)


def test_stage_label_on_bad_image(cfg):
    with pytest.raises(P.StageError, match=r"^\[preprocess\]") as ei:
        P.process_image(np.zeros((40, 40, 3), np.uint8), cfg)
    assert ei.value.input_error


def test_healthy_image_scores_below_half(model, cfg):
    rng = np.random.default_rng(99)
    for _ in range(3):
        rgb, truth = S.render(scene(rng, 0))
        dets, heat = P.detect(rgb, model, cfg)
        assert not truth.has_lesion
        assert all(d.score < 0.5 for d in dets)
        assert heat.max() < 0.5


def test_planted_blobs_found(model, cfg):
    rng = np.random.default_rng(199)
    for _ in range(3):
        rgb, truth = S.render(scene(rng, 5))
        dets, heat = P.detect(rgb, model, cfg, image_id="x")
        _, hit = match([d for d in dets if d.score >= 0.5], annotations(truth), cfg.match_radius)
        assert len(truth.points) == 5 and hit.sum() >= 4
        assert heat.shape == rgb.shape[:2] and 0 <= heat.min() and heat.max() <= 1


def test_model_applies_training_normalization(table, model):
    X = np.vstack([t.X for t in table])
    stats = NormStats.fit(X)
    assert np.array_equal(model.norm_stats.mean, stats.mean)
    assert model.feature_indices == list(range(29))


# --- cross-validation -------------------------------------------------------------

def test_cv_fits_on_training_folds_only(table, cfg, monkeypatch):
    seen = []
    real = P.train_model

    def spy(X, y, c):
        seen.append(X)
        return real(X, y, c)

    monkeypatch.setattr(P, "train_model", spy)
    res = P.cross_validate(table[:10], cfg, k=5, seed=2, repetitions=1)
    folds = res.folds[0]
    for X, test in zip(seen, folds):
        train = [t for i, t in enumerate(table[:10]) if i not in set(test.tolist())]
        assert np.array_equal(X, np.vstack([t.X for t in train]))
    assert sorted(d.image_id for d in res.detections) == sorted(
        t.image_id for t in table[:10] for _ in range(len(t.X)))


def test_cv_deterministic(table, cfg):
    a = P.cross_validate(table[:10], cfg, k=5, seed=1)
    b = P.cross_validate(table[:10], cfg, k=5, seed=1)
    assert a.detections == b.detections and a.f_score == b.f_score


def test_cv_too_few_images(table, cfg):
    with pytest.raises(ValueError, match="cannot fill"):
        P.cross_validate(table[:3], cfg, k=10)


def test_cv_reexported_from_evaluation(table, cfg):
    from madetect.evaluation import cross_validate
    assert cross_validate(table[:6], cfg, k=3).detections == P.cross_validate(table[:6], cfg, k=3).detections


# --- dataset runs -------------------------------------------------------------------

def save_png(path, rgb):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path)


def generic_dataset(root, n=3, seed=5):
    rng = np.random.default_rng(seed)
    truth = GroundTruthSet()
    for k in range(n):
        rgb, t = S.render(scene(rng, 5 if k % 2 == 0 else 0))
        save_png(root / "images" / f"im{k}.png", rgb)
        truth.images[f"im{k}"] = annotations(t)
    truth.to_csv(root / "truth.csv")
    return truth


def test_generic_run_with_model(tmp_path, model, cfg):
    generic_dataset(tmp_path / "ds")
    rep = P.run_dataset(tmp_path / "ds", tmp_path / "out", cfg, model=model)
    out = tmp_path / "out"
    assert sorted(p.name for p in (out / "detections").iterdir()) == ["im0.csv", "im1.csv", "im2.csv"]
    assert json.loads((out / "report.json").read_text())["f_score"] == pytest.approx(rep.f_score)
    assert (out / "froc.csv").exists() and len(list((out / "features").iterdir())) == 3
    assert rep.f_score > 0.8


def test_resumed_run_matches_uninterrupted(tmp_path, cfg, monkeypatch):
    generic_dataset(tmp_path / "ds", n=6, seed=8)
    cv_cfg = P.PipelineConfig(match_radius=5.0, boost=FAST, cv_folds=3)
    P.run_dataset(tmp_path / "ds", tmp_path / "full", cv_cfg, seed=4)

    real = P.image_features
    calls = []

    def flaky(*a, **kw):
        calls.append(1)
        if len(calls) == 4:
            raise KeyboardInterrupt
        return real(*a, **kw)

    monkeypatch.setattr(P, "image_features", flaky)
    with pytest.raises(KeyboardInterrupt):
        P.run_dataset(tmp_path / "ds", tmp_path / "part", cv_cfg, seed=4)
    cached = {p.name for p in (tmp_path / "part" / "features").glob("*.csv")}
    assert 3 <= len(cached) < 6 and "im3.csv" not in cached
    assert not list((tmp_path / "part" / "features").glob("*.tmp"))
    monkeypatch.setattr(P, "image_features", real)
    P.run_dataset(tmp_path / "ds", tmp_path / "part", cv_cfg, seed=4)
    assert (tmp_path / "part" / "report.json").read_bytes() == (tmp_path / "full" / "report.json").read_bytes()
    for p in (tmp_path / "full" / "detections").iterdir():
        assert (tmp_path / "part" / "detections" / p.name).read_bytes() == p.read_bytes()


def test_thread_count_does_not_change_output(tmp_path, model, cfg, monkeypatch):
    generic_dataset(tmp_path / "ds", n=4)
    P.run_dataset(tmp_path / "ds", tmp_path / "a", cfg, model=model)
    monkeypatch.setenv(P.THREADS_ENV, "3")
    P.run_dataset(tmp_path / "ds", tmp_path / "b", cfg, model=model)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_generic_layout_errors(tmp_path):
    with pytest.raises(ValueError, match="images/"):
        P.load_dataset(tmp_path, "generic")
    with pytest.raises(ValueError, match="does not exist"):
        P.load_dataset(tmp_path / "nope", "generic")


ROC_XML = """<?xml version="1.0"?>
<set>
  <annotations imageID="images/a.png">
    <annotation><x>12.5</x><y>20</y><radius>3</radius></annotation>
    <annotation><x>40</x><y>41</y></annotation>
  </annotations>
  <annotations imageID="b.png"/>
</set>
"""


def test_roc_adapter(tmp_path):
    rgb = np.zeros((8, 8, 3), np.uint8)
    save_png(tmp_path / "images" / "a.png", rgb)
    save_png(tmp_path / "images" / "b.png", rgb)
    (tmp_path / "ann.xml").write_text(ROC_XML)
    items = P.load_dataset(tmp_path, "roc")
    assert [i.image_id for i in items] == ["a", "b"]
    assert items[0].annotations == [Annotation(12.5, 20.0, 3.0), Annotation(40.0, 41.0, None)]
    assert items[1].annotations == []


def test_roc_adapter_malformed(tmp_path):
    (tmp_path / "ann.xml").write_text("<set><annotations")
    with pytest.raises(ValueError, match="malformed"):
        P.load_dataset(tmp_path, "roc")


def test_eophtha_adapter(tmp_path):
    rgb = np.zeros((30, 30, 3), np.uint8)
    save_png(tmp_path / "MA" / "e1.png", rgb)
    save_png(tmp_path / "healthy" / "h1.png", rgb)
    mask = np.zeros((30, 30, 3), np.uint8)
    mask[4:7, 4:7] = 255
    mask[20, 21] = 255
    save_png(tmp_path / "Annotation_MA" / "e1.png", mask)
    items = P.load_dataset(tmp_path, "eophtha")
    assert [i.image_id for i in items] == ["e1", "h1"]
    a, b = items[0].annotations
    assert (a.x, a.y) == (5.0, 5.0) and a.radius == pytest.approx(np.sqrt(9 / np.pi))
    assert (b.x, b.y) == (21.0, 20.0)
    assert items[1].annotations == []


def test_ensemble_round_trip_through_pipeline(tmp_path, model):
    model.save(tmp_path / "m.json")
    back = TrainedEnsemble.load(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(5, 29))
    assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
