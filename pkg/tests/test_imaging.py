import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbdetect.autograd import ContractViolation, Tensor
from tbdetect.imaging import (
    BACILLI_COLOR,
    OTHER_COLOR,
    ROI,
    binarize,
    connected_components,
    crop_to_grid,
    extract_rois,
    filter_regions_by_area,
    otsu_level,
    otsu_threshold,
    overlay_render,
    patch_grid,
    reassemble_mask,
    scaled_min_area,
    split_into_patches,
    to_gray,
)

from oracles import flood_fill_components, luma, otsu_exhaustive


@pytest.mark.parametrize(
    "w,h,p,count",
    [(2880, 2048, 256, 88), (2816, 2048, 256, 88), (2592, 1944, 256, 70), (256, 256, 64, 16), (100, 70, 32, 6)],
)
def test_patch_counts(w, h, p, count):
    assert patch_grid(w, h, p).count == count


def test_patches_are_row_major_and_exact():
    img = np.arange(6 * 9).reshape(6, 9)
    patches, grid = split_into_patches(img, 3)
    assert (grid.cols, grid.rows) == (3, 2)
    np.testing.assert_array_equal(patches[1], img[0:3, 3:6])
    np.testing.assert_array_equal(patches[3], img[3:6, 0:3])


def test_patch_larger_than_image_rejected():
    with pytest.raises(ContractViolation):
        split_into_patches(np.zeros((10, 20)), 16)
    with pytest.raises(ContractViolation):
        patch_grid(10, 10, 0)


@settings(max_examples=100, deadline=None)
@given(w=st.integers(8, 90), h=st.integers(8, 90), p=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_tiling_roundtrip(w, h, p, seed):
    mask = np.random.Generator(np.random.Philox(seed)).random((h, w)) > 0.5
    patches, grid = split_into_patches(mask, p)
    out = reassemble_mask(patches, grid)
    np.testing.assert_array_equal(out, crop_to_grid(mask, grid))
    assert out.shape == ((h // p) * p, (w // p) * p)


def test_reassemble_contracts():
    _, grid = split_into_patches(np.zeros((8, 8), bool), 4)
    with pytest.raises(ContractViolation):
        reassemble_mask([np.zeros((4, 4))] * 3, grid)
    with pytest.raises(ContractViolation):
        reassemble_mask([np.zeros((4, 5))] * 4, grid)


def test_binarize_is_strict():
    p = np.array([[0.5, 0.50001], [0.2, 0.9]])
    np.testing.assert_array_equal(binarize(p, 0.5), [[False, True], [False, True]])
    np.testing.assert_array_equal(binarize(Tensor(p[None, None]), 0.5), binarize(p, 0.5))


def _check_against_flood_fill(mask, connectivity):
    regions = connected_components(mask, connectivity)
    ref = flood_fill_components(mask, connectivity)
    assert len(regions) == len(ref)
    union = np.zeros(mask.shape, dtype=int)
    for r, (pix, area, bbox) in zip(regions, ref):
        ys, xs = r.pixels()
        assert set(zip(ys.tolist(), xs.tolist())) == pix
        assert r.area == area
        assert r.bbox == bbox
        union[ys, xs] += 1
    # partition: every foreground pixel in exactly one region
    np.testing.assert_array_equal(union, mask.astype(int))


def test_components_match_flood_fill_200_masks():
    rng = np.random.Generator(np.random.Philox(77))
    for i in range(200):
        density = rng.uniform(0.2, 0.7)
        mask = rng.random((32, 32)) < density
        _check_against_flood_fill(mask, 8)
        if i % 4 == 0:
            _check_against_flood_fill(mask, 4)


def test_diagonal_pixels_connect_only_with_eight():
    m = np.eye(4, dtype=bool)
    assert len(connected_components(m, 8)) == 1
    assert len(connected_components(m, 4)) == 4


def test_components_ids_follow_raster_order():
    m = np.zeros((5, 6), bool)
    m[3, 0] = m[0, 4] = m[1, 1] = True
    regs = connected_components(m)
    assert [r.bbox for r in regs] == [(4, 0, 4, 0), (1, 1, 1, 1), (0, 3, 0, 3)]
    assert [r.id for r in regs] == [1, 2, 3]
    assert connected_components(np.zeros((3, 3), bool)) == []


def test_area_filter_is_strict():
    m = np.zeros((10, 20), bool)
    m[0, 0:5] = True  # 5 px
    m[5, 0:6] = True  # 6 px
    regs = connected_components(m)
    assert [r.area for r in filter_regions_by_area(regs, 5)] == [6]
    assert scaled_min_area(256) == 200
    assert scaled_min_area(64) == 12.5


def test_extract_rois_crops_bbox():
    img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
    m = np.zeros((8, 8), bool)
    m[2:4, 3:6] = True
    (roi,) = extract_rois(img, connected_components(m))
    assert roi.bbox == (3, 2, 5, 3)
    np.testing.assert_array_equal(roi.crop, img[2:4, 3:6])


def test_luma_and_otsu_against_exhaustive_search():
    rng = np.random.Generator(np.random.Philox(5))
    for i in range(100):
        h, w = rng.integers(4, 40, 2)
        if i % 3 == 0:
            # bimodal images
            img = np.where(rng.random((h, w, 1)) < 0.3, rng.integers(0, 120, (h, w, 3)), rng.integers(100, 256, (h, w, 3)))
        else:
            img = rng.integers(0, 256, (h, w, 3))
        img = img.astype(np.uint8)
        gray = to_gray(img)
        np.testing.assert_array_equal(gray, luma(img))
        assert otsu_level(gray) == otsu_exhaustive(gray)


def test_otsu_polarity_and_degenerate_image():
    img = np.zeros((4, 4, 3), np.uint8)
    img[:2] = 200
    t, dark = otsu_threshold(img)
    assert 0 <= t < 200 and dark.sum() == 8 and not dark[0].any()
    _, bright = otsu_threshold(img, "bright")
    np.testing.assert_array_equal(bright, ~dark)
    t, m = otsu_threshold(np.full((3, 3, 3), 7, np.uint8))
    assert t == 0 and not m.any()
    with pytest.raises(ContractViolation):
        otsu_threshold(img, "grey")


def test_overlay_colours():
    img = np.zeros((10, 10, 3), np.uint8)
    rois = [ROI(1, (1, 1, 3, 3), None, predicted_label=1), ROI(2, (5, 5, 8, 8), None, predicted_label=0)]
    out = overlay_render(img, rois)
    assert tuple(out[1, 2]) == BACILLI_COLOR
    assert tuple(out[5, 6]) == OTHER_COLOR
    assert tuple(out[2, 2]) == (0, 0, 0)
    assert not img.any()
