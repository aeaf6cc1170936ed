import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genhints.images import (
    IDENTITY_SPEC,
    HintTransformSpec,
    ImageError,
    RasterImage,
    apply_hint_transform,
    flip_horizontal,
    images_from_bytes,
    images_to_bytes,
    item_rng,
    load_images,
    read_image,
    rotate,
    round_half_up,
    sample_hint_parameters,
    save_images,
    transform_array,
    transform_batch,
    translate,
    write_image,
)

pixel_arrays = arrays(
    np.float64,
    st.tuples(st.integers(2, 12), st.integers(2, 12)),
    elements=st.floats(0, 1),
)


def img(values):
    return RasterImage(np.asarray(values, dtype=float))


class TestRasterImage:
    def test_from_flat_row_major(self):
        im = RasterImage.from_flat(2, 3, [0, 0.1, 0.2, 0.3, 0.4, 0.5])
        assert (im.height, im.width) == (2, 3)
        assert im.pixels[1, 0] == 0.3

    def test_from_flat_length_checked(self):
        with pytest.raises(ImageError):
            RasterImage.from_flat(2, 2, [0, 0, 0])

    def test_values_clamped(self):
        np.testing.assert_array_equal(img([[-1, 0.5, 2]]).pixels, [[0, 0.5, 1]])

    def test_pixels_read_only(self):
        im = img([[0.1, 0.2]])
        with pytest.raises(ValueError):
            im.pixels[0, 0] = 1.0

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(4), np.array([[np.nan]])])
    def test_rejects_malformed(self, bad):
        with pytest.raises(ImageError):
            RasterImage(bad)


class TestFlip:
    def test_column_reversal(self):
        assert flip_horizontal(img([[1, 0.5], [0.25, 0]])) == img([[0.5, 1], [0, 0.25]])

    def test_hand_example_scaled(self):
        # [[1,2],[3,4]] / 4 keeps the example inside [0, 1]
        out = flip_horizontal(img(np.array([[1, 2], [3, 4]]) / 4))
        np.testing.assert_array_equal(out.pixels * 4, [[2, 1], [4, 3]])

    def test_symmetric_fixed_point(self):
        sym = img([[0.1, 0.7, 0.1], [0.3, 0.0, 0.3]])
        assert flip_horizontal(sym) == sym

    @given(pixel_arrays)
    def test_involution_and_multiset(self, pixels):
        im = RasterImage(pixels)
        assert flip_horizontal(flip_horizontal(im)) == im
        np.testing.assert_array_equal(np.sort(flip_horizontal(im).pixels.ravel()), np.sort(im.pixels.ravel()))


class TestTranslate:
    def test_zero_shift_identity(self, rng):
        im = RasterImage(rng.random((5, 5)))
        assert translate(im, 0, 0) == im

    def test_zero_image_unchanged(self):
        z = RasterImage(np.zeros((4, 4)))
        assert translate(z, 2, -1) == z

    def test_index_shift_oracle(self, rng):
        src = RasterImage(rng.random((4, 4)))
        out = translate(src, 1, 0)
        np.testing.assert_array_equal(out.pixels[:, 0], 0)
        for c in range(1, 4):
            np.testing.assert_array_equal(out.pixels[:, c], src.pixels[:, c - 1])

    def test_vertical_shift(self, rng):
        src = RasterImage(rng.random((4, 4)))
        out = translate(src, 0, -1)
        np.testing.assert_array_equal(out.pixels[:3], src.pixels[1:])
        np.testing.assert_array_equal(out.pixels[3], 0)

    @pytest.mark.parametrize("dx,dy", [(4, 0), (0, -4), (10, 10)])
    def test_shift_too_large(self, dx, dy):
        with pytest.raises(ImageError):
            translate(RasterImage(np.zeros((4, 4))), dx, dy)

    @given(pixel_arrays, st.integers(-3, 3), st.integers(-3, 3))
    def test_additive_composition_on_rows(self, pixels, a, b):
        h, w = pixels.shape
        if max(abs(a), abs(b), abs(a + b)) >= w:
            return
        im = RasterImage(pixels)
        twice = translate(translate(im, a, 0), b, 0)
        once = translate(im, a + b, 0)
        # columns whose content never left the frame agree exactly
        keep = [c for c in range(w) if 0 <= c - b < w and 0 <= c - a - b < w]
        np.testing.assert_array_equal(twice.pixels[:, keep], once.pixels[:, keep])


class TestRotate:
    def test_zero_is_bit_exact(self, rng):
        im = RasterImage(rng.random((7, 7)))
        assert rotate(im, 0.0) is im

    def test_limit(self):
        with pytest.raises(ImageError):
            rotate(RasterImage(np.zeros((3, 3))), 91)

    def test_centered_disk_rotation_invariant(self):
        # disk with a smooth radial edge, centred on the pixel grid centre;
        # a hard edge would measure interpolation error rather than geometry
        n = 33
        c = (n - 1) / 2
        yy, xx = np.mgrid[0:n, 0:n]
        r = np.hypot(yy - c, xx - c)
        disk = RasterImage(0.5 * (1 - np.tanh((r - 9.0) / 2.0)))
        out = rotate(disk, 30)
        assert np.max(np.abs(out.pixels - disk.pixels)) < 0.05

    def test_near_inverse_composition(self, rng):
        yy, xx = np.mgrid[0:24, 0:24]
        smooth = 0.5 + 0.5 * np.sin(xx / 3.0) * np.cos(yy / 4.0)
        im = RasterImage(smooth)
        back = rotate(rotate(im, 10), -10)
        interior = (slice(5, 19), slice(5, 19))
        assert np.mean(np.abs(back.pixels[interior] - im.pixels[interior])) < 0.02

    def test_quarter_turn_on_grid(self):
        # 90 degree rotation hits grid points exactly
        src = np.zeros((5, 5))
        src[2, 4] = 1.0
        out = rotate(RasterImage(src), 90).pixels
        assert np.isclose(out.sum(), 1.0)
        assert np.isclose(out.max(), 1.0)

    @given(pixel_arrays, st.floats(-90, 90))
    def test_shape_and_range(self, pixels, deg):
        out = rotate(RasterImage(pixels), deg)
        assert out.shape == pixels.shape
        assert out.pixels.min() >= 0 and out.pixels.max() <= 1


class TestHintTransform:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(flip_probability=1.5), dict(max_translate_fraction=0.6), dict(max_rotate_degrees=91),
         dict(flip_probability=-0.1)],
    )
    def test_spec_ranges(self, kwargs):
        with pytest.raises(ImageError):
            HintTransformSpec(**kwargs)

    def test_identity_spec(self, rng):
        im = RasterImage(rng.random((6, 6)))
        assert IDENTITY_SPEC.is_identity
        assert apply_hint_transform(im, IDENTITY_SPEC, np.random.default_rng(0)) == im

    def test_flip_only_is_exact_flip(self, rng):
        im = RasterImage(rng.random((6, 6)))
        spec = HintTransformSpec(flip_probability=1.0)
        assert apply_hint_transform(im, spec, np.random.default_rng(3)) == flip_horizontal(im)

    def test_fixed_seed_deterministic(self, rng):
        im = RasterImage(rng.random((8, 8)))
        spec = HintTransformSpec(0.5, 0.2, 30.0)
        a = apply_hint_transform(im, spec, np.random.default_rng(11))
        b = apply_hint_transform(im, spec, np.random.default_rng(11))
        assert a == b

    def test_round_half_up(self):
        assert [round_half_up(v) for v in (0.49, 0.5, 1.5, 2.5, 0.0)] == [0, 1, 2, 3, 0]

    @given(st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 90), st.integers(0, 2**32))
    def test_sampled_parameters_within_bounds(self, p, frac, deg, seed):
        spec = HintTransformSpec(p, frac, deg)
        flip, dx, dy, degrees = sample_hint_parameters(spec, 16, 16, np.random.default_rng(seed))
        bound = round_half_up(frac * 16)
        assert abs(dx) <= bound and abs(dy) <= bound
        assert -deg <= degrees <= deg
        if p == 0:
            assert not flip

    def test_flip_probability_frequency(self):
        spec = HintTransformSpec(flip_probability=0.3)
        flips = [sample_hint_parameters(spec, 8, 8, item_rng(0, (1,), i))[0] for i in range(4000)]
        assert abs(np.mean(flips) - 0.3) < 0.03

    def test_batch_equals_per_image(self, rng):
        spec = HintTransformSpec(0.5, 0.1, 20.0, seed_stream=4)
        images = [RasterImage(rng.random((9, 9))) for _ in range(6)]
        batch = transform_batch(images, spec, (7, 2))
        for i, im in enumerate(images):
            alone = apply_hint_transform(im, spec, item_rng(4, (7, 2), i))
            np.testing.assert_allclose(batch[i].pixels, alone.pixels, atol=1e-15)

    def test_batch_result_ignores_batch_composition(self, rng):
        spec = HintTransformSpec(1.0, 0.1, 20.0)
        arr = rng.random((5, 8, 8))
        full = transform_array(arr, spec, (3,))
        head = transform_array(arr[:2], spec, (3,))
        np.testing.assert_array_equal(full[:2], head)

    def test_identity_batch_returns_same_images(self, rng):
        images = [RasterImage(rng.random((4, 4)))]
        assert transform_batch(images, IDENTITY_SPEC, (0,))[0] is images[0]

    @given(pixel_arrays, st.integers(0, 1000))
    def test_transform_preserves_shape_and_range(self, pixels, seed):
        spec = HintTransformSpec(1.0, 0.05, 18.0)
        out = apply_hint_transform(RasterImage(pixels), spec, np.random.default_rng(seed))
        assert out.shape == pixels.shape
        assert 0 <= out.pixels.min() and out.pixels.max() <= 1


class TestSerialization:
    def test_record_layout(self):
        im = img([[0.25, 0.5, 1.0]])
        buf = io.BytesIO()
        write_image(buf, im)
        raw = buf.getvalue()
        assert raw[:8] == bytes([0, 0, 0, 1, 0, 0, 0, 3])
        np.testing.assert_array_equal(np.frombuffer(raw[8:], ">f4"), [0.25, 0.5, 1.0])

    def test_round_trip(self, rng, tmp_path):
        images = [RasterImage(rng.random((4, 5)).astype(np.float32)) for _ in range(3)]
        save_images(tmp_path / "x.bin", images)
        assert load_images(tmp_path / "x.bin") == images
        assert images_from_bytes(images_to_bytes(images)) == images

    def test_truncated(self):
        raw = images_to_bytes([img([[0.5, 0.5]])])
        with pytest.raises(ImageError):
            images_from_bytes(raw[:-2])
        with pytest.raises(ImageError):
            read_image(io.BytesIO(raw[:5]))

    def test_zero_dims_rejected(self):
        with pytest.raises(ImageError):
            images_from_bytes(bytes(8))

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ImageError, match="nope.bin"):
            load_images(tmp_path / "nope.bin")
