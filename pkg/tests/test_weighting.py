import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from madetect import synthetic as S
from madetect.weighting import (DEFAULT_ORIENTATIONS, GradientConfig, aggregate, gaussian_gradient,
                                gradient_magnitude, weight_transform)


def test_default_orientations_are_seven_inclusive():
    assert len(DEFAULT_ORIENTATIONS) == 7
    assert DEFAULT_ORIENTATIONS[0] == 0 and DEFAULT_ORIENTATIONS[-1] == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("m,w", [(0.0, 1.0), (1.0, 0.0), (3.0, -0.8)])
def test_weight_transform_spot_values(m, w):
    assert weight_transform(np.array([m]))[0] == w


def test_constant_image():
    img = np.full((32, 32), 0.4)
    assert np.all(gradient_magnitude(img, 2.0, 0.3) == 0)
    agg = aggregate(img)
    for wo in agg.per_scale.values():
        assert np.all(wo == 7)
    assert np.all(agg.total == 35)


def test_step_edge_matches_dense_oracle_and_is_symmetric():
    img = np.zeros((48, 64))
    img[:, 32:] = 0.5
    m = gradient_magnitude(img, 2.0, 0.0)
    gx, gy = S._oracle_gradient(img, 2.0)
    assert np.allclose(m, np.hypot(gx, gy), atol=1e-12)
    row = m[24]
    assert row.argmax() in (31, 32)
    assert row[31] == pytest.approx(row[32], abs=1e-12)
    assert np.allclose(row[20:32], row[32:44][::-1], atol=1e-12)


def test_isotropic_blob_same_for_rotated_kernels():
    yy, xx = np.mgrid[0:41, 0:41]
    img = np.exp(-((xx - 20) ** 2 + (yy - 20) ** 2) / 18.0)
    assert np.allclose(gradient_magnitude(img, 1.5, 0.0), gradient_magnitude(img, 1.5, math.pi / 4),
                       atol=1e-6)


@pytest.mark.parametrize("theta", [0.0, math.pi / 12, math.pi / 3])
def test_against_rotated_kernel_oracle(rng, theta):
    img = rng.random((24, 24))
    cfg = GradientConfig(scales=(1.5,), orientations=(theta,))
    assert np.allclose(aggregate(img, cfg).total, S.oracle_weighted(img, 1.5, theta), atol=1e-10)


def test_single_scale_single_orientation_is_plain_weight(rng):
    img = rng.random((20, 20))
    cfg = GradientConfig(scales=(2.0,), orientations=(0.5,))
    agg = aggregate(img, cfg)
    assert np.array_equal(agg.total, weight_transform(gradient_magnitude(img, 2.0, 0.5)))


def test_dark_dot_gives_donut():
    yy, xx = np.mgrid[0:64, 0:64]
    img = 0.8 - 0.6 * np.exp(-((xx - 32) ** 2 + (yy - 32) ** 2) / (2 * 2.0 ** 2))
    total = aggregate(img).total
    assert total[32, 34] < total[32, 32]


def test_prefactor_options():
    img = np.zeros((16, 16))
    img[:, 8:] = 1
    a = gaussian_gradient(img, 2.0, prefactor="sqrt")[0]
    b = gaussian_gradient(img, 2.0, prefactor="unit")[0]
    assert np.allclose(a * (1 / math.sqrt(2 * math.pi * 4)), b)


@pytest.mark.parametrize("kw", [{"scales": ()}, {"scales": (-1.0,)}, {"orientations": (2.0,)},
                                {"kernel_truncation": 2.0}, {"prefactor": "x"}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GradientConfig(**kw)


@given(st.integers(0, 2 ** 31))
def test_bounds(seed):
    img = np.random.default_rng(seed).random((20, 20)) * 5
    cfg = GradientConfig(scales=(1.0, 2.0))
    agg = aggregate(img, cfg)
    k = len(cfg.orientations)
    for wo in agg.per_scale.values():
        assert np.all(np.abs(wo) <= k)
    assert np.all(np.abs(agg.total) <= k * 2)
    assert np.all(gradient_magnitude(img, 1.0) >= 0)
