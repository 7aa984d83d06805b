import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from robust_selfmodel.image_core import (ImageFormatError, as_image, as_mask, clip_intensity,
                                         image_to_mask, load_image, load_mask, mask_to_image,
                                         quantize, save_image, save_mask, to_grayscale)


def test_grayscale_white_black_red():
    assert np.all(to_grayscale(np.ones((2, 3, 3))) == 1.0)
    assert np.all(to_grayscale(np.zeros((2, 3, 3))) == 0.0)
    red = np.zeros((2, 2, 3))
    red[..., 0] = 1.0
    np.testing.assert_allclose(to_grayscale(red), 0.2126)


def test_grayscale_rejects_single_channel():
    with pytest.raises(ValueError, match="already grayscale"):
        to_grayscale(np.zeros((2, 2, 1)))


def test_clip_examples():
    np.testing.assert_array_equal(clip_intensity([1.3, -0.2, 0.5]), [1.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        clip_intensity([0.1, np.nan])


def test_as_image_validation():
    assert as_image(np.zeros((4, 5))).shape == (4, 5, 1)
    for bad in (np.zeros((2, 2, 2)), np.full((2, 2), 1.5), np.full((2, 2), np.inf)):
        with pytest.raises(ValueError):
            as_image(bad)
    with pytest.raises(ValueError):
        as_mask(np.full((2, 2), 2))


@pytest.mark.parametrize("suffix,channels", [(".pgm", 1), (".ppm", 3), (".png", 1), (".png", 3)])
def test_roundtrip_representable(tmp_path, suffix, channels):
    vals = np.array([0, 1 / 255, 128 / 255, 1.0])
    img = np.repeat(vals.reshape(2, 2, 1), channels, axis=2)
    path = tmp_path / f"x{suffix}"
    save_image(img, path)
    np.testing.assert_array_equal(load_image(path), img)


def test_half_reloads_as_128(tmp_path):
    save_image(np.full((1, 1, 1), 0.5), tmp_path / "h.pgm")
    assert load_image(tmp_path / "h.pgm")[0, 0, 0] == 128 / 255


def test_corrupt_header(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 x\n255\n\x00\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        load_image(bad)
    bad.write_bytes(b"P9\n2 2\n255\n\x00\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        load_image(bad)
    bad.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ImageFormatError, match="expected 4"):
        load_image(bad)
    bad.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(ImageFormatError, match="maxval"):
        load_image(bad)


def test_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5 # made by hand\n2 1\n# another\n255\n\x00\xff")
    np.testing.assert_array_equal(load_image(p)[0, :, 0], [0.0, 1.0])


def test_extension_channel_checks(tmp_path):
    with pytest.raises(ValueError):
        save_image(np.zeros((2, 2, 3)), tmp_path / "a.pgm")
    with pytest.raises(ValueError):
        save_image(np.zeros((2, 2, 1)), tmp_path / "a.ppm")
    with pytest.raises(ValueError):
        save_image(np.zeros((2, 2, 1)), tmp_path / "a.tif")


def test_mask_image_examples():
    assert np.all(mask_to_image(np.ones((3, 3), np.uint8)) == 1.0)
    assert np.all(image_to_mask(np.full((3, 3), 0.6), 0.5) == 1)
    np.testing.assert_array_equal(image_to_mask(np.array([[0.4, 0.6]]), 0.5), [[0, 1]])
    with pytest.raises(ValueError):
        image_to_mask(np.zeros((2, 2)), 1.0)


def test_mask_file_is_0_255(tmp_path):
    m = np.array([[0, 1], [1, 0]], np.uint8)
    save_mask(m, tmp_path / "m.pgm")
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.endswith(bytes([0, 255, 255, 0]))
    np.testing.assert_array_equal(load_mask(tmp_path / "m.pgm"), m)


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]))))
def test_load_save_identity_on_8bit(tmp_path_factory, data):
    img = data / 255.0
    path = tmp_path_factory.mktemp("rt") / ("a.pgm" if data.shape[2] == 1 else "a.ppm")
    save_image(img, path)
    np.testing.assert_array_equal(load_image(path), img)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(0, 1)))
def test_save_quantizes(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("q") / "a.pgm"
    save_image(data, path)
    np.testing.assert_allclose(load_image(path)[:, :, 0], quantize(data), atol=1e-12)


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 1)))
def test_mask_image_mask_identity(m):
    np.testing.assert_array_equal(image_to_mask(mask_to_image(m), 0.5), m)
