import math

import numpy as np
import pytest

from madetect import synthetic as S
from madetect.lcf import SupportConfig


def test_no_blobs_is_healthy():
    rgb, truth = S.render(S.SceneSpec(size=32))
    assert rgb.shape == (32, 32, 3) and rgb.dtype == np.uint8
    assert not truth.has_lesion and truth.points.shape == (0, 3)


def test_gaussian_blob_centre_depth():
    spec = S.SceneSpec(size=41, level=0.7, blobs=(S.Blob(20, 20, 6, depth=0.5),))
    rgb, truth = S.render(spec)
    g = rgb[..., 1].astype(int)
    assert g[0, 0] - g[20, 20] == pytest.approx(0.5 * 255, abs=1)
    assert truth.points.tolist() == [[20, 20, 6]]


def test_same_seed_bit_identical():
    spec = S.SceneSpec(size=48, background="speckle", speckle=0.05, seed=11,
                       blobs=(S.Blob(20, 20, 4, shape="annulus"),), vessels=(S.Vessel(0, 0, 47, 47),))
    a, _ = S.render(spec)
    b, _ = S.render(spec)
    assert np.array_equal(a, b)
    c, _ = S.render(S.SceneSpec(size=48, background="speckle", speckle=0.05, seed=12))
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kw", [dict(blobs=(S.Blob(40, 3, 2),)), dict(blobs=(S.Blob(3, 3, 2, depth=0),)),
                                dict(vessels=(S.Vessel(0, 0, 5, 5, depth=1.5),)), dict(background="plaid")])
def test_invalid_specs_rejected(kw):
    with pytest.raises(ValueError):
        S.SceneSpec(size=32, **kw)


def test_spec_from_dict():
    d = {"size": 40, "blobs": [{"x": 10, "y": 12, "radius": 3, "shape": "disc"}],
         "vessels": [{"x0": 0, "y0": 0, "x1": 39, "y1": 0}]}
    spec = S.SceneSpec.from_dict(d)
    assert spec.blobs[0] == S.Blob(10, 12, 3, shape="disc") and len(spec.vessels) == 1


def test_disc_coverage_area():
    img = S.render_intensity(S.SceneSpec(size=40, level=1.0, blobs=(S.Blob(20.3, 19.6, 7, depth=1.0, shape="disc"),)))
    assert (1 - img).sum() == pytest.approx(math.pi * 49, rel=0.02)


def test_distractors_excluded_from_truth():
    spec = S.SceneSpec(size=40, blobs=(S.Blob(10, 10, 3, shape="disc", bright=True),
                                       S.Blob(25, 25, 5, shape="disc", annotated=False),
                                       S.Blob(30, 10, 3, shape="disc")))
    _, truth = S.render(spec)
    assert truth.points.tolist() == [[30, 10, 3]]


def test_random_scene_keeps_lesions_off_vessels():
    rng = np.random.default_rng(4)
    for _ in range(5):
        spec = S.random_scene(rng)
        assert len(spec.blobs) == 5 and len(spec.vessels) == 3
        for b in spec.blobs:
            for v in spec.vessels:
                assert S.vessel_distance(spec.size, v)[round(b.y), round(b.x)] - v.width / 2 >= 12


def test_dataset_specs_reproducible():
    a = S.dataset_specs(4, seed=3, size=96, n_bright=2, n_blotches=1)
    b = S.dataset_specs(4, seed=3, size=96, n_bright=2, n_blotches=1)
    assert a == b and [i for i, _ in a] == ["syn0000", "syn0001", "syn0002", "syn0003"]


def test_brute_constant_image_all_zero():
    r = S.brute_ci(np.full((20, 20), 0.3), (10, 10), SupportConfig(num_lines=8, r_min=1, r_max=5))
    assert r["F_ARF"] == 0 and r["F_SBF"] == 0 and r["F_SEF"] == 0


def test_brute_radial_dark_spot_is_full_convergence():
    yy, xx = np.mgrid[0:31, 0:31].astype(float)
    img = ((xx - 15) ** 2 + (yy - 15) ** 2) / 100.0
    r = S.brute_ci(img, (15, 15), SupportConfig(num_lines=16, r_min=0, r_max=6))
    assert r["F_SBF"] == pytest.approx(1.0, abs=1e-9)


def test_oracle_weighting_flat_image_is_one():
    assert np.allclose(S.oracle_weighted(np.full((12, 12), 0.5), 1.0, 0.3), 1.0)
