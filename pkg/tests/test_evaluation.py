import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from madetect.evaluation import (Annotation, Detection, FrocCurve, GroundTruthSet, evaluate, fold_assignment,
                                 froc, froc_partial_auc, froc_score, image_roc_auc, match,
                                 read_detections_csv, sensitivity_at, write_detections_csv)


def det(x, y, s, iid="a"):
    return Detection(iid, x, y, s)


def flat_curve(s):
    """Curve holding sensitivity `s` from FPI ~0 up to 8."""
    return FrocCurve(np.array([np.inf, 1.0, 0.5]), np.array([0.0, 1e-15, 8.0]), np.array([0.0, s, s]))


# --- matching ---------------------------------------------------------------

def test_detection_on_annotation_is_tp():
    tp, hit = match([det(10, 10, 0.5)], [Annotation(10, 10)], 5.0)
    assert tp.tolist() == [True] and hit.tolist() == [True]


def test_one_to_one_rule_favours_higher_score():
    tp, _ = match([det(10, 10, 0.2), det(11, 10, 0.9)], [Annotation(10, 10)], 5.0)
    assert tp.tolist() == [False, True]


def test_just_outside_radius_is_fp():
    tp, hit = match([det(10 + 6.0, 10, 0.5)], [Annotation(10, 10)], 5.0)
    assert not tp[0] and not hit[0]
    tp, _ = match([det(15.0, 10, 0.5)], [Annotation(10, 10)], 5.0)
    assert tp[0]


def test_annotation_radius_widens_match():
    tp, _ = match([det(18, 10, 0.5)], [Annotation(10, 10, radius=9.0)], 5.0)
    assert tp[0]


def test_nearest_unhit_annotation_taken():
    tp, hit = match([det(10, 10, 0.9), det(12, 10, 0.8)], [Annotation(13, 10), Annotation(9, 10)], 5.0)
    assert tp.all() and hit.all()


# --- FROC -------------------------------------------------------------------

def truth2():
    return GroundTruthSet({"a": [Annotation(10, 10), Annotation(50, 50)], "b": []})


def test_perfect_detector_reaches_full_sensitivity_at_zero_fpi():
    dets = [det(10, 10, 0.9), det(50, 50, 0.8), det(90, 90, 0.1, "b")]
    c = froc(dets, truth2(), 5.0)
    k = int(np.nonzero(c.sensitivity == 1.0)[0][0])
    assert c.fpi[k] == 0.0


def test_empty_detections_single_point():
    c = froc([], truth2(), 5.0)
    assert c.points() == [(math.inf, 0.0, 0.0)]
    assert froc_score(c) == 0.0


def test_zero_annotations_rejected():
    with pytest.raises(ValueError, match="zero annotations"):
        froc([det(1, 1, 0.5)], GroundTruthSet({"a": []}), 5.0)


def test_healthy_images_count_in_fpi():
    t = GroundTruthSet({"a": [Annotation(10, 10)], "b": [], "c": [], "d": []})
    c = froc([det(80, 80, 0.5, "b")], t, 5.0)
    assert c.fpi[-1] == pytest.approx(0.25)


def brute_froc_point(dets, truth, radius, thr):
    """Counts at one threshold, matching only the detections that pass it."""
    tp = fp = 0
    for iid, anns in truth.images.items():
        mine = [d for d in dets if d.image_id == iid and d.score >= thr]
        flags, _ = match(mine, anns, radius)
        tp += int(flags.sum())
        fp += int((~flags).sum())
    return fp / truth.n_images, tp / truth.n_annotations, tp + fp


@st.composite
def scenes(draw):
    n_img = draw(st.integers(1, 4))
    truth = GroundTruthSet({})
    dets = []
    for i in range(n_img):
        iid = f"i{i}"
        truth.images[iid] = [Annotation(draw(st.integers(0, 40)), draw(st.integers(0, 40)))
                             for _ in range(draw(st.integers(0, 3)))]
        for _ in range(draw(st.integers(0, 6))):
            dets.append(det(draw(st.integers(0, 40)), draw(st.integers(0, 40)),
                            draw(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9])), iid))
    if truth.n_annotations == 0:
        truth.images["i0"].append(Annotation(20, 20))
    return dets, truth


@given(scenes())
def test_froc_matches_per_threshold_enumeration(case):
    dets, truth = case
    c = froc(dets, truth, 8.0)
    assert np.all(np.diff(c.fpi) >= 0) and np.all(np.diff(c.sensitivity) >= 0)
    assert np.all(np.diff(c.thresholds) < 0)
    for thr, fpi, sens in c.points()[1:]:
        bf, bs, n_above = brute_froc_point(dets, truth, 8.0, thr)
        assert fpi == pytest.approx(bf) and sens == pytest.approx(bs)
        assert n_above == sum(d.score >= thr for d in dets)
    f = froc_score(c)
    assert 0.0 <= f <= 1.0
    assert 0.0 <= froc_partial_auc(c) <= 0.984375 + 1e-12


# --- scalar summaries ---------------------------------------------------------

def test_published_sensitivities_average():
    vals = [0.435, 0.443, 0.454, 0.476, 0.481, 0.495, 0.506]
    fpis = [0.125, 0.25, 0.5, 1, 2, 4, 8]
    c = FrocCurve(np.r_[np.inf, np.linspace(1, 0, 7)], np.r_[0.0, fpis], np.r_[0.0, vals])
    assert froc_score(c) == pytest.approx(0.471, abs=1e-3)


@pytest.mark.parametrize("s", [0.0, 0.3, 1.0])
def test_constant_sensitivity(s):
    c = flat_curve(s)
    assert froc_score(c) == pytest.approx(s)
    assert froc_partial_auc(c) == pytest.approx(s * (8 - 0.125) / 8, abs=1e-12)


def test_constant_one_fauc_exact():
    assert froc_partial_auc(flat_curve(1.0)) == 0.984375


def test_linear_ramp_fauc():
    c = FrocCurve(np.array([np.inf, 2.0, 1.0]), np.array([0.0, 0.125, 8.0]), np.array([0.0, 0.0, 1.0]))
    assert froc_partial_auc(c) == pytest.approx(0.5 * (8 - 0.125) / 8)


def test_interpolation_from_origin_and_hold():
    c = FrocCurve(np.array([np.inf, 0.5]), np.array([0.0, 1.0]), np.array([0.0, 0.6]))
    assert sensitivity_at(c, 0.5) == pytest.approx(0.3)
    assert sensitivity_at(c, 5.0) == pytest.approx(0.6)


def test_auc_examples():
    assert image_roc_auc([0.9, 0.8, 0.85, 0.1], [1, 1, 0, 0]) == pytest.approx(0.75)
    assert image_roc_auc([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0
    assert image_roc_auc([0.5] * 4, [1, 0, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        image_roc_auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=12))
def test_auc_equals_pair_enumeration(rows):
    s = [r[0] for r in rows]
    lab = [r[1] for r in rows]
    if all(lab) or not any(lab):
        return
    pairs = [(a, b) for a, la in zip(s, lab) if la for b, lb in zip(s, lab) if not lb]
    want = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in pairs) / len(pairs)
    assert image_roc_auc(s, lab) == pytest.approx(want)


def test_evaluate_report_fields(tmp_path):
    dets = [det(10, 10, 0.9), det(50, 50, 0.4), det(5, 5, 0.3, "b")]
    rep = evaluate(dets, truth2(), 5.0)
    assert rep.auc == 1.0
    d = rep.to_dict()
    assert set(d["sensitivity_at_fpi"]) == {"0.125", "0.25", "0.5", "1.0", "2.0", "4.0", "8.0"}
    assert d["curve"][0]["threshold"] is None
    rep.save(tmp_path / "r.json")
    rep.curve.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "threshold,fpi,sensitivity"


# --- files and folds ------------------------------------------------------------

def test_detection_csv_round_trip(tmp_path):
    dets = [det(1.25, 2.5, 0.1 + 1e-13), det(3, 4, 0.9, "b")]
    write_detections_csv(tmp_path / "d.csv", dets)
    assert read_detections_csv(tmp_path / "d.csv") == dets


def test_truth_csv_keeps_healthy_images(tmp_path):
    t = GroundTruthSet({"a": [Annotation(1.0, 2.0, 3.0), Annotation(4.0, 5.0)], "b": []})
    t.to_csv(tmp_path / "t.csv")
    back = GroundTruthSet.from_csv(tmp_path / "t.csv")
    assert back == t and back.image_label("b") == 0 and back.image_label("a") == 1


def test_fold_partition_arithmetic():
    folds = fold_assignment(20, 10, seed=3)
    assert [len(f) for f in folds] == [2] * 10
    assert sorted(np.concatenate(folds).tolist()) == list(range(20))


def test_folds_deterministic_and_leave_one_out():
    a, b = fold_assignment(13, 4, 9), fold_assignment(13, 4, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(len(f) == 1 for f in fold_assignment(7, 7, 0))


def test_too_few_images_for_folds():
    with pytest.raises(ValueError, match="cannot fill"):
        fold_assignment(3, 10, 0)
