import numpy as np
import pytest
from helpers import brute_force_smooth
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from kelpseg.exceptions import ShapeMismatch
from kelpseg.postprocess import (
    LandSeaThresholder,
    PostprocessConfig,
    binarize,
    land_sea_mask,
    postprocess,
    read_mask,
    read_rle_csv,
    rle_decode,
    rle_encode,
    smooth_dem,
    write_mask,
    write_rle_csv,
)


def test_zero_dem():
    np.testing.assert_array_equal(smooth_dem(np.zeros((350, 350))), 0)
    assert smooth_dem(np.zeros((350, 350))).shape == (350, 350)


def test_single_pixel_spreads_to_four_windows():
    dem = np.zeros((16, 16))
    dem[6, 9] = 3.5
    out = smooth_dem(dem)
    np.testing.assert_array_equal(out, brute_force_smooth(dem))
    assert sorted(zip(*np.nonzero(out))) == [(5, 8), (5, 9), (6, 8), (6, 9)]
    assert (out[out != 0] == 3.5).all()


def test_constant_dem_interior_is_four_h():
    out = smooth_dem(np.full((10, 10), 2.0))
    np.testing.assert_array_equal(out[:-1, :-1], 8.0)
    np.testing.assert_array_equal(out[-1, :-1], 4.0)
    assert out[-1, -1] == 2.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_smooth_dem_matches_brute_force_exactly(seed):
    dem = np.random.default_rng(seed).integers(-50, 200, (16, 16)).astype(np.int16)
    np.testing.assert_array_equal(smooth_dem(dem), brute_force_smooth(dem.astype(np.float64)))


def test_land_rule():
    assert not land_sea_mask(smooth_dem(np.zeros((8, 8)))).any()
    assert land_sea_mask(smooth_dem(np.ones((8, 8)))).all()
    dem = np.zeros((8, 8))
    dem[0, 0] = 5
    assert land_sea_mask(smooth_dem(dem)).sum() == 1
    dem[0, 0], dem[4, 4] = 0, 5
    assert land_sea_mask(smooth_dem(dem)).sum() == 4
    assert not land_sea_mask(smooth_dem(np.full((8, 8), -3.0))).any()


def test_binarize_boundaries():
    sea = np.zeros((1, 1), bool)
    land = np.ones((1, 1), bool)
    assert binarize(np.array([[0.43]]), PostprocessConfig(), sea)[0, 0] == 1
    assert binarize(np.array([[0.42]]), PostprocessConfig(), sea)[0, 0] == 0
    assert binarize(np.array([[0.99]]), PostprocessConfig(), land)[0, 0] == 0
    assert binarize(np.array([[0.5]]), 0.5).dtype == np.uint8


def test_binarize_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        binarize(np.zeros((4, 4)), 0.43, np.zeros((5, 5), bool))


def test_threshold_must_be_open_interval():
    for bad in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            PostprocessConfig(threshold=bad)


def test_positive_count_is_monotone_over_grid():
    rng = np.random.default_rng(0)
    grid = [round(0.30 + 0.01 * i, 2) for i in range(31)]
    for _ in range(20):
        prob = rng.random((32, 32))
        land = rng.random((32, 32)) > 0.7
        counts = [int(binarize(prob, t, land).sum()) for t in grid]
        assert all(b <= a for a, b in zip(counts, counts[1:]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), threshold=st.floats(0.01, 0.99))
def test_no_kelp_on_land(seed, threshold):
    rng = np.random.default_rng(seed)
    dem = rng.integers(-20, 20, (24, 24))
    prob = rng.random((24, 24))
    mask = postprocess(prob, dem, PostprocessConfig(threshold=threshold)).values
    land = land_sea_mask(smooth_dem(dem))
    assert not (mask.astype(bool) & land).any()


def test_mask_raster_round_trip(tmp_path):
    mask = (np.random.default_rng(1).random((20, 20)) > 0.5).astype(np.uint8)
    back = read_mask(write_mask(mask, tmp_path / "m.tif"))
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, mask)


def test_rle_encoding_is_column_major():
    mask = np.array([[1, 0], [1, 1]], np.uint8)
    assert rle_encode(mask) == "1 2 4 1"
    assert rle_encode(np.zeros((3, 3))) == ""


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), h=st.integers(1, 12), w=st.integers(1, 12))
def test_rle_round_trip(seed, h, w):
    mask = (np.random.default_rng(seed).random((h, w)) > 0.5).astype(np.uint8)
    np.testing.assert_array_equal(rle_decode(rle_encode(mask), mask.shape), mask)


def test_rle_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    masks = {f"C{i}": (rng.random((6, 7)) > 0.5).astype(np.uint8) for i in range(3)}
    back = read_rle_csv(write_rle_csv(masks, tmp_path / "r.csv"))
    assert set(back) == set(masks)
    for k in masks:
        np.testing.assert_array_equal(back[k], masks[k])


def test_thresholder_estimator():
    est = LandSeaThresholder(threshold=0.5)
    assert clone(est).get_params() == est.get_params()
    dem = np.zeros((4, 4))
    dem[0, 0] = 1
    out = est.fit().predict([(np.full((4, 4), 0.6), dem), (np.full((4, 4), 0.4), None)])
    assert out.shape == (2, 4, 4)
    assert out[0, 0, 0] == 0 and out[0].sum() == 15
    assert out[1].sum() == 0
