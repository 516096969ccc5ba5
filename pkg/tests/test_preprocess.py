import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cystseg import reference
from cystseg.config import NlmParams, PreprocessConfig
from cystseg.errors import SchemaError, TileTooSmallError
from cystseg.frames import Frame, MaskSet, Vendor
from cystseg.preprocess import (clahe_u8, crop_band, nlm_denoise_u8, preprocess_frame,
                                resize_bilinear_u8, resize_mask_nearest, to_8bit, to_8bit_u)

SMALL = st.integers(min_value=5, max_value=12)


def test_to_8bit_pinned_values():
    arr = np.array([[0, 128, 257, 65535]], dtype=np.uint16)
    out = to_8bit_u(arr)
    assert out.dtype == np.uint8
    # round(v * 255 / 65535): 0 -> 0, 128 -> 0 (0.498), 257 -> 1, 65535 -> 255
    assert out.tolist() == [[0, 0, 1, 255]]


@given(st.integers(min_value=0, max_value=255))
def test_to_8bit_inverts_times_257(v):
    arr = np.full((3, 3), v * 257, dtype=np.uint16)
    assert (to_8bit_u(arr) == v).all()


def test_to_8bit_u8_passthrough():
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    frame = Frame(pixels=arr)
    assert np.array_equal(to_8bit(frame).pixels, arr)


def test_nlm_matches_reference_bit_exactly(rng):
    for _ in range(20):
        img = rng.integers(0, 256, size=(7, 7), dtype=np.uint8)
        fast = nlm_denoise_u8(img, search_size=5, patch_size=3, h=12.0)
        slow = reference.nlm_reference(img, search_size=5, patch_size=3, h=12.0)
        assert np.array_equal(fast, slow)


def test_nlm_rectangular_and_even_sized_inputs(rng):
    img = rng.integers(0, 256, size=(6, 9), dtype=np.uint8)
    fast = nlm_denoise_u8(img, search_size=5, patch_size=3, h=8.0)
    slow = reference.nlm_reference(img, search_size=5, patch_size=3, h=8.0)
    assert np.array_equal(fast, slow)


@settings(max_examples=20, deadline=None)
@given(SMALL, SMALL, st.integers(min_value=0, max_value=255))
def test_nlm_constant_image_is_fixed_point(h, w, c):
    img = np.full((h, w), c, dtype=np.uint8)
    assert np.array_equal(nlm_denoise_u8(img, 5, 3, 10.0), img)


def test_nlm_window_validation():
    img = np.zeros((8, 8), dtype=np.uint8)
    with pytest.raises(SchemaError):
        nlm_denoise_u8(img, search_size=4, patch_size=3, h=10.0)  # even window
    with pytest.raises(SchemaError):
        nlm_denoise_u8(img, search_size=5, patch_size=0, h=10.0)


def test_clahe_matches_reference(rng):
    for _ in range(3):
        img = rng.integers(0, 256, size=(32, 48), dtype=np.uint8)
        fast = clahe_u8(img, grid=(4, 4), clip_limit=2.0)
        slow = reference.clahe_reference(img, grid=(4, 4), clip_limit=2.0)
        assert np.abs(fast.astype(int) - slow.astype(int)).max() <= 1


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=16, max_value=40), st.integers(min_value=16, max_value=40),
       st.integers(min_value=0, max_value=255))
def test_clahe_constant_image_is_fixed_point(h, w, c):
    img = np.full((h, w), c, dtype=np.uint8)
    assert np.array_equal(clahe_u8(img, grid=(2, 2), clip_limit=2.0), img)


def test_clahe_single_tile_unbounded_equals_global_hist_eq():
    # 16x16 ramp: every value 0..255 exactly once
    img = np.arange(256, dtype=np.uint8).reshape(16, 16)
    ours = clahe_u8(img, grid=(1, 1), clip_limit=1e9)
    plain = reference.hist_eq_reference(img)
    assert np.abs(ours.astype(int) - plain.astype(int)).max() <= 1


def test_clahe_tile_too_small():
    img = np.zeros((4, 4), dtype=np.uint8)
    with pytest.raises(TileTooSmallError):
        clahe_u8(img, grid=(8, 8), clip_limit=2.0)


def test_resize_matches_reference(rng):
    for th, tw in ((9, 23), (30, 10), (13, 17)):
        img = rng.integers(0, 256, size=(13, 17), dtype=np.uint8)
        assert np.array_equal(resize_bilinear_u8(img, th, tw),
                              reference.bilinear_reference(img, th, tw))


@settings(max_examples=20, deadline=None)
@given(SMALL, SMALL)
def test_resize_identity_at_same_size(h, w):
    img = np.random.default_rng(h * 100 + w).integers(0, 256, (h, w), dtype=np.uint8)
    assert np.array_equal(resize_bilinear_u8(img, h, w), img)


@settings(max_examples=20, deadline=None)
@given(SMALL, SMALL, st.integers(min_value=0, max_value=255))
def test_resize_constant_stays_constant(h, w, c):
    img = np.full((h, w), c, dtype=np.uint8)
    assert (resize_bilinear_u8(img, h + 3, w + 5) == c).all()


def test_resize_mask_nearest_preserves_values():
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2:5, 3:8] = 1
    out = resize_mask_nearest(mask, 25, 25)
    assert out.shape == (25, 25)
    assert set(np.unique(out)) <= {0, 1}
    assert out.sum() > 0


def test_crop_band_rebases():
    pixels = np.arange(100, dtype=np.uint8).reshape(10, 10)
    frame = Frame(pixels=pixels, band_top=2, band_bottom=7)
    out = crop_band(frame)
    assert out.pixels.shape == (5, 10)
    assert np.array_equal(out.pixels, pixels[2:7])
    assert out.band_top == 0 and out.band_bottom == 5


def test_preprocess_frame_full_contract(rng):
    pixels = rng.integers(0, 256, size=(40, 60), dtype=np.uint8)
    frame = Frame(pixels=pixels, vendor=Vendor.CIRRUS, band_top=8, band_bottom=36,
                  pixel_size_x=0.01, pixel_size_y=0.004)
    g1 = np.zeros((40, 60), dtype=np.uint8)
    g1[10:20, 10:30] = 1
    masks = MaskSet(graders={"grader1": g1, "grader2": g1.copy()})
    config = PreprocessConfig(
        nlm={Vendor.CIRRUS: NlmParams(5, 3, 10.0)},
        clahe_grid=(2, 2), target_height=32, target_width=64,
    )
    out, out_masks = preprocess_frame(frame, masks, config)
    assert out.pixels.shape == (32, 64)
    assert out.pixels.dtype == np.uint8
    assert out.band_top == 0 and out.band_bottom == 32
    assert out_masks is not None
    for m in out_masks.graders.values():
        assert m.shape == (32, 64)
        assert set(np.unique(m)) <= {0, 1}
    # pixel sizes rescale by original/new extent
    assert out.pixel_size_x == pytest.approx(0.01 * 60 / 64)
    assert out.pixel_size_y == pytest.approx(0.004 * 28 / 32)


def test_preprocess_frame_too_small_for_tiles():
    frame = Frame(pixels=np.zeros((4, 4), dtype=np.uint8), vendor=Vendor.CIRRUS)
    config = PreprocessConfig(nlm={Vendor.CIRRUS: NlmParams(3, 1, 10.0)},
                              clahe_grid=(8, 8), target_height=8, target_width=8)
    with pytest.raises(TileTooSmallError):
        preprocess_frame(frame, None, config)
