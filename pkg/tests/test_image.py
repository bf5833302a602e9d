import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from madetect.image import (ImageError, fov_mask, green_channel, load_image, read_field, save_image,
                            write_field)


def test_black_png_decodes_to_zeros(tmp_path):
    p = tmp_path / "black.png"
    save_image(p, np.zeros((2, 2, 3), np.uint8))
    img = load_image(p)
    assert img.shape == (2, 2, 3) and img.dtype == np.uint8 and not img.any()


def test_large_image_keeps_dimensions(tmp_path):
    p = tmp_path / "big.png"
    save_image(p, np.full((960, 1440, 3), 90, np.uint8))
    assert load_image(p).shape == (960, 1440, 3)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_round_trip_is_bit_exact(tmp_path, rng, suffix):
    img = rng.integers(0, 256, (17, 23, 3), dtype=np.uint8)
    p = tmp_path / f"x{suffix}"
    save_image(p, img)
    once = load_image(p)
    save_image(p, once)
    assert np.array_equal(load_image(p), img)


def test_grayscale_replicated(tmp_path):
    from PIL import Image
    p = tmp_path / "g.pgm"
    Image.fromarray(np.arange(12, dtype=np.uint8).reshape(3, 4)).save(p)
    img = load_image(p)
    assert img.shape == (3, 4, 3)
    assert (img[..., 0] == img[..., 1]).all() and (img[..., 1] == img[..., 2]).all()


def test_truncated_file_is_unreadable(tmp_path):
    p = tmp_path / "t.png"
    save_image(p, np.zeros((20, 20, 3), np.uint8))
    p.write_bytes(p.read_bytes()[:30])
    with pytest.raises(ImageError, match="unreadable file"):
        load_image(p)


def test_missing_file_is_unreadable(tmp_path):
    with pytest.raises(ImageError, match="unreadable file"):
        load_image(tmp_path / "nope.png")


def test_unsupported_format(tmp_path):
    from PIL import Image
    p = tmp_path / "x.bmp"
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(p)
    with pytest.raises(ImageError, match="unsupported format"):
        load_image(p)


@pytest.mark.parametrize("rgb,expected", [((10, 255, 30), 1.0), ((0, 128, 0), 128 / 255), ((0, 0, 0), 0.0)])
def test_green_channel_values(rgb, expected):
    img = np.zeros((2, 2, 3), np.uint8)
    img[1, 0] = rgb
    assert green_channel(img)[1, 0] == pytest.approx(expected, abs=1e-12)


@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3))))
def test_green_channel_in_unit_range(img):
    g = green_channel(img)
    assert g.min() >= 0 and g.max() <= 1


def test_fov_mask_matches_rasterized_disk():
    n, r = 101, 40.0
    yy, xx = np.mgrid[0:n, 0:n]
    disk = (xx - 50) ** 2 + (yy - 50) ** 2 <= r * r
    img = np.zeros((n, n, 3), np.uint8)
    img[disk] = (180, 120, 40)
    assert np.array_equal(fov_mask(img), disk)


def test_fov_mask_all_bright_and_all_black():
    assert fov_mask(np.full((5, 6, 3), 200, np.uint8)).all()
    with pytest.raises(ImageError, match="empty mask"):
        fov_mask(np.zeros((5, 6, 3), np.uint8))


def test_fov_mask_keeps_largest_component_and_fills_holes():
    img = np.zeros((40, 40, 3), np.uint8)
    img[5:30, 5:30] = 200
    img[15:18, 15:18] = 0          # hole
    img[35:38, 35:38] = 200        # small separate blob
    m = fov_mask(img)
    assert m[16, 16] and not m[36, 36]
    assert m.sum() == 25 * 25


@given(arrays(np.uint8, (12, 12, 3)))
def test_fov_mask_single_component_without_holes(img):
    from scipy import ndimage
    try:
        m = fov_mask(img)
    except ImageError:
        return
    _, n = ndimage.label(m)
    assert n == 1
    assert np.array_equal(ndimage.binary_fill_holes(m), m)


def test_field_round_trip(tmp_path, rng):
    f = rng.random((7, 9)).astype(np.float32).astype(np.float64)
    p = tmp_path / "f.raw"
    write_field(p, f)
    data = p.read_bytes()
    assert data[:4] == b"LCFF" and len(data) == 16 + 4 * 63
    assert int.from_bytes(data[4:8], "little") == 9 and int.from_bytes(data[8:12], "little") == 7
    assert np.array_equal(read_field(p), f)


def test_field_bad_magic(tmp_path):
    p = tmp_path / "f.raw"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ImageError):
        read_field(p)
