import numpy as np
import pytest
from PIL import Image

from kinverify.errors import DataError
from kinverify.preprocess import (
    Ellipse,
    PreprocConfig,
    bilinear_resize,
    default_ellipse,
    elliptical_mask,
    load_grayscale,
    preprocess_image,
    preprocess_pipeline,
    resize_and_crop,
    retinex_ssr,
)


def bilinear_oracle(img, oh, ow):
    """Independent per-pixel bilinear resample, same documented convention."""
    ih, iw = img.shape
    out = np.empty((oh, ow))
    for i in range(oh):
        sy = (i + 0.5) * (ih / oh) - 0.5
        y0 = np.floor(sy)
        fy = sy - y0
        y0c = int(min(max(y0, 0), ih - 1))
        y1c = int(min(max(y0 + 1, 0), ih - 1))
        for j in range(ow):
            sx = (j + 0.5) * (iw / ow) - 0.5
            x0 = np.floor(sx)
            fx = sx - x0
            x0c = int(min(max(x0, 0), iw - 1))
            x1c = int(min(max(x0 + 1, 0), iw - 1))
            top = img[y0c, x0c] * (1.0 - fx) + img[y0c, x1c] * fx
            bottom = img[y1c, x0c] * (1.0 - fx) + img[y1c, x1c] * fx
            out[i, j] = top * (1.0 - fy) + bottom * fy
    return out


def smooth_face_image(seed=5, size=200):
    """Face-like test image: textured, intensities within [40, 215]."""
    from kinverify.dataset import _compose_face, _texture

    rng = np.random.default_rng(seed)
    return _compose_face(_texture(rng, size, size), _texture(rng, size, size))


class TestLoadGrayscale:
    def test_single_channel_file_loads_identically(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(40, 30), dtype=np.uint8)
        p = tmp_path / "gray.png"
        Image.fromarray(arr, mode="L").save(p)
        loaded = load_grayscale(p)
        assert loaded.dtype == np.float64
        np.testing.assert_array_equal(loaded, arr.astype(np.float64))

    def test_equal_rgb_channels_load_as_that_value(self, tmp_path):
        arr = np.full((16, 16, 3), 77, dtype=np.uint8)
        p = tmp_path / "rgb.png"
        Image.fromarray(arr, mode="RGB").save(p)
        loaded = load_grayscale(p)
        np.testing.assert_allclose(loaded, 77.0, atol=1e-9)

    def test_rgb_uses_documented_luma_weights(self, tmp_path):
        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        arr[..., 0] = 100
        arr[..., 1] = 150
        arr[..., 2] = 200
        p = tmp_path / "color.png"
        Image.fromarray(arr, mode="RGB").save(p)
        # hand-computed: 0.299*100 + 0.587*150 + 0.114*200
        expected = 140.75
        np.testing.assert_allclose(load_grayscale(p), expected, atol=1e-9)

    def test_unreadable_file_raises(self, tmp_path):
        p = tmp_path / "junk.png"
        p.write_bytes(b"this is not an image")
        with pytest.raises(DataError):
            load_grayscale(p)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(DataError):
            load_grayscale(tmp_path / "absent.png")


class TestResizeAndCrop:
    def test_constant_image_stays_constant(self):
        out = resize_and_crop(np.full((120, 90), 7.0))
        assert out.shape == (115, 126)
        np.testing.assert_array_equal(out, 7.0)

    def test_target_sized_input_is_pure_crop(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 255, (200, 200))
        out = resize_and_crop(img)
        assert out[0, 0] == img[43, 55]
        np.testing.assert_array_equal(out, img[43:158, 55:181])

    def test_matches_bilinear_oracle_exactly(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 255, (400, 400))
        out = resize_and_crop(img)
        expected = bilinear_oracle(img, 200, 200)[43:158, 55:181]
        assert np.abs(out - expected).max() == 0.0

    @pytest.mark.parametrize("shape", [(64, 64), (200, 200), (333, 217), (1000, 150)])
    def test_output_dimensions_fixed(self, shape):
        rng = np.random.default_rng(3)
        out = resize_and_crop(rng.uniform(0, 255, shape))
        assert out.shape == (115, 126)

    def test_resize_identity_when_shapes_match(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 255, (57, 61))
        np.testing.assert_array_equal(bilinear_resize(img, 57, 61), img)

    def test_small_resize_matches_oracle(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 255, (7, 9))
        assert np.abs(bilinear_resize(img, 13, 4) - bilinear_oracle(img, 13, 4)).max() == 0.0


class TestRetinex:
    def test_constant_image_maps_to_zeros(self):
        out = retinex_ssr(np.full((64, 64), 123.0), 15.0)
        np.testing.assert_array_equal(out, 0.0)

    def test_single_bright_pixel_is_the_maximum(self):
        img = np.zeros((65, 65))
        img[32, 32] = 255.0
        out = retinex_ssr(img, 5.0)
        assert np.unravel_index(np.argmax(out), out.shape) == (32, 32)

    @pytest.mark.parametrize("c", [0.5, 2.0])
    def test_multiplicative_illumination_invariance(self, c):
        img = smooth_face_image()
        base = retinex_ssr(img, 15.0)
        scaled = retinex_ssr(c * img, 15.0)
        assert np.abs(scaled - base).max() < 1.0

    def test_recovers_reflectance_under_smooth_illumination(self):
        ys, xs = np.mgrid[0:160, 0:160].astype(np.float64)
        reflectance = np.where(((xs // 8) + (ys // 8)) % 2 == 0, 60.0, 180.0)
        illumination = 0.4 + 1.2 * (xs / 159.0)
        out = retinex_ssr(reflectance * illumination, 15.0)
        corr = np.corrcoef(out.ravel(), np.log(reflectance).ravel())[0, 1]
        assert corr > 0.9

    def test_deterministic(self):
        img = smooth_face_image(seed=9)
        np.testing.assert_array_equal(retinex_ssr(img, 15.0), retinex_ssr(img, 15.0))

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(ValueError):
            retinex_ssr(np.ones((8, 8)), 0.0)


class TestEllipticalMask:
    def test_center_pixel_always_kept(self):
        img = np.full((31, 41), 9.0)
        e = Ellipse(x0=20.0, y0=15.0, a=1.0, b=1.0)
        out = elliptical_mask(img, e, fill=-1.0)
        assert out[15, 20] == 9.0

    def test_corner_outside_inscribed_ellipse_is_filled(self):
        h, w = 50, 70
        img = np.full((h, w), 5.0)
        e = Ellipse(x0=(w - 1) / 2, y0=(h - 1) / 2, a=w / 2 - 1, b=h / 2 - 1)
        out = elliptical_mask(img, e, fill=0.0)
        assert out[0, 0] == 0.0

    @pytest.mark.parametrize("a,b", [(30.0, 30.0), (45.0, 31.0), (60.0, 50.0)])
    def test_kept_area_close_to_ellipse_area(self, a, b):
        size = int(2 * max(a, b)) + 21
        img = np.ones((size, size))
        e = Ellipse(x0=(size - 1) / 2, y0=(size - 1) / 2, a=a, b=b)
        kept = elliptical_mask(img, e, fill=0.0).sum()
        assert abs(kept - np.pi * a * b) / (np.pi * a * b) < 0.02

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0, 255, (33, 57))
        once = elliptical_mask(img, fill=3.5)
        twice = elliptical_mask(once, fill=3.5)
        np.testing.assert_array_equal(once, twice)

    def test_default_ellipse_is_inscribed(self):
        e = default_ellipse((115, 126))
        assert (e.x0, e.y0) == (62.5, 57.0)
        assert (e.a, e.b) == (63.0, 57.5)


class TestPipeline:
    def test_flags_off_equals_resize_and_crop(self):
        img = smooth_face_image(seed=7)
        cfg = PreprocConfig.for_method("basic")
        np.testing.assert_array_equal(preprocess_image(img, cfg), resize_and_crop(img, cfg))

    def test_mask_only_keeps_inside_values(self):
        img = smooth_face_image(seed=8)
        cfg = PreprocConfig.for_method("mask")
        cropped = resize_and_crop(img, cfg)
        out = preprocess_image(img, cfg)
        e = default_ellipse(cropped.shape)
        ys = np.arange(cropped.shape[0])[:, None]
        xs = np.arange(cropped.shape[1])[None, :]
        inside = ((xs - e.x0) / e.a) ** 2 + ((ys - e.y0) / e.b) ** 2 <= 1.0
        np.testing.assert_array_equal(out[inside], cropped[inside])
        np.testing.assert_array_equal(out[~inside], cfg.mask_fill)

    def test_both_flags_mask_applied_after_retinex(self):
        img = smooth_face_image(seed=9)
        cfg = PreprocConfig.for_method("retinex+mask", mask_fill=-7.0)
        out = preprocess_image(img, cfg)
        cropped = resize_and_crop(img, cfg)
        enhanced = retinex_ssr(cropped, cfg.retinex_sigma)
        e = default_ellipse(cropped.shape)
        ys = np.arange(cropped.shape[0])[:, None]
        xs = np.arange(cropped.shape[1])[None, :]
        inside = ((xs - e.x0) / e.a) ** 2 + ((ys - e.y0) / e.b) ** 2 <= 1.0
        np.testing.assert_array_equal(out[inside], enhanced[inside])
        np.testing.assert_array_equal(out[~inside], -7.0)

    def test_debug_dir_writes_stage_files(self, tmp_path):
        img = np.clip(smooth_face_image(seed=10), 0, 255).astype(np.uint8)
        src = tmp_path / "face.png"
        Image.fromarray(img, mode="L").save(src)
        out_dir = tmp_path / "stages"
        preprocess_pipeline(src, PreprocConfig.for_method("retinex+mask"), debug_dir=out_dir)
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [
            "face_00_grayscale.png",
            "face_01_resize_crop.png",
            "face_02_retinex.png",
            "face_03_mask.png",
        ]

    def test_stages_deterministic_end_to_end(self, tmp_path):
        img = np.clip(smooth_face_image(seed=11), 0, 255).astype(np.uint8)
        src = tmp_path / "face.png"
        Image.fromarray(img, mode="L").save(src)
        cfg = PreprocConfig.for_method("retinex+mask")
        a = preprocess_pipeline(src, cfg)
        b = preprocess_pipeline(src, cfg)
        np.testing.assert_array_equal(a, b)
