import csv
import warnings

import numpy as np
import pytest
import tifffile
from helpers import random_chip
from hypothesis import given, settings
from hypothesis import strategies as st

from kelpseg.dataset import (
    BAND_NAMES,
    Manifest,
    ManifestEntry,
    apply_exclusions,
    build_manifest,
    default_exclusions,
    load_chip,
    read_exclusions_text,
    read_manifest_csv,
    save_chip,
    split_train_val,
    write_manifest_csv,
)
from kelpseg.exceptions import (
    DuplicateChipId,
    EmptyDirectory,
    InsufficientData,
    MissingBand,
    NonBinaryMask,
    ShapeMismatch,
)

PAPER_EXCLUDED = (
    "QI166183", "ED338157", "UM703003", "OE173822", "JD667551",
    "SH612997", "FH847016", "ER356842", "DU589187",
)  # fmt: skip


def _manifest(n, prefix="C", labeled=True):
    return Manifest(
        tuple(
            ManifestEntry(f"{prefix}{i:06d}", f"{prefix}{i:06d}.tif", "m.tif" if labeled else None)
            for i in range(n)
        )
    )


def test_load_round_trip_is_bit_equal(tmp_path):
    chip = random_chip()
    image, mask = save_chip(chip, tmp_path)
    loaded = load_chip(image, mask)
    assert loaded.chip_id == chip.chip_id
    assert tuple(loaded.bands) == BAND_NAMES
    for name in BAND_NAMES:
        np.testing.assert_array_equal(loaded.band(name), chip.band(name))
    np.testing.assert_array_equal(loaded.mask, chip.mask)


def test_load_without_mask(tmp_path):
    image, _ = save_chip(random_chip(labeled=False), tmp_path)
    assert load_chip(image).mask is None


def test_six_bands_raise_missing_band(tmp_path):
    path = tmp_path / "XX000001_satellite.tif"
    tifffile.imwrite(path, np.zeros((6, 350, 350), np.uint16))
    with pytest.raises(MissingBand):
        load_chip(path)


def test_wrong_size_raises_shape_mismatch(tmp_path):
    path = tmp_path / "XX000001_satellite.tif"
    tifffile.imwrite(path, np.zeros((7, 300, 300), np.uint16))
    with pytest.raises(ShapeMismatch):
        load_chip(path)
    assert load_chip(path, expected_size=None).size == 300


def test_mask_value_two_raises(tmp_path):
    image, _ = save_chip(random_chip(labeled=False), tmp_path)
    mask = np.zeros((350, 350), np.uint8)
    mask[3, 4] = 2
    mask_path = tmp_path / "AB000001_kelp.tif"
    tifffile.imwrite(mask_path, mask)
    with pytest.raises(NonBinaryMask):
        load_chip(image, mask_path)


def test_manifest_pairs_images_and_masks(tmp_path):
    for i in range(3):
        save_chip(random_chip(f"PA{i:06d}", size=8, seed=i), tmp_path)
    manifest = build_manifest(tmp_path)
    assert len(manifest) == 3
    assert all(e.labeled for e in manifest)


def test_manifest_marks_unlabeled(tmp_path):
    save_chip(random_chip("PA000001", size=8), tmp_path)
    save_chip(random_chip("PA000002", size=8, labeled=False), tmp_path)
    manifest = build_manifest(tmp_path)
    assert len(manifest) == 2
    assert [e.chip_id for e in manifest if not e.labeled] == ["PA000002"]


def test_manifest_duplicate_ids(tmp_path):
    save_chip(random_chip("PA000001", size=8), tmp_path / "a")
    save_chip(random_chip("PA000001", size=8), tmp_path / "b")
    with pytest.raises(DuplicateChipId):
        build_manifest(tmp_path)


def test_manifest_empty_directory(tmp_path):
    with pytest.raises(EmptyDirectory):
        build_manifest(tmp_path)


def test_bundled_exclusions_match_list():
    assert default_exclusions() == frozenset(PAPER_EXCLUDED)
    assert read_exclusions_text("# note\nAA1\n\nBB2  \n") == frozenset({"AA1", "BB2"})


def test_exclusions_remove_nine_of_1128():
    others = [ManifestEntry(f"V{i:07d}", "x.tif", "m.tif") for i in range(1128 - 9)]
    listed = [ManifestEntry(c, "x.tif", "m.tif") for c in PAPER_EXCLUDED]
    manifest = Manifest(tuple(others + listed))
    out = apply_exclusions(manifest, default_exclusions())
    assert len(out) == 1119
    assert out.excluded_ids == frozenset(PAPER_EXCLUDED)


def test_empty_exclusions_leave_manifest():
    manifest = _manifest(5)
    assert apply_exclusions(manifest, set()).entries == manifest.entries


def test_unknown_exclusion_warns():
    manifest = _manifest(5)
    with pytest.warns(UserWarning, match="NOPE"):
        out = apply_exclusions(manifest, {"NOPE"})
    assert out.entries == manifest.entries


def test_exclusions_idempotent():
    manifest = _manifest(20)
    ids = {"C000003", "C000011"}
    once = apply_exclusions(manifest, ids)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        twice = apply_exclusions(once, ids)
    assert twice == once


def test_split_ten_chips():
    manifest = _manifest(10)
    a = split_train_val(manifest, seed=42, fraction=0.8)
    b = split_train_val(manifest, seed=42, fraction=0.8)
    assert (len(a.train_ids), len(a.val_ids)) == (8, 2)
    assert a == b


def test_split_5635_gives_1127_val():
    split = split_train_val(_manifest(5635), seed=42, fraction=0.8)
    assert abs(len(split.val_ids) - 1127) <= 1
    assert len(split.train_ids) + len(split.val_ids) == 5635


def test_split_depends_on_seed():
    manifest = _manifest(100)
    assert split_train_val(manifest, 1).val_ids != split_train_val(manifest, 2).val_ids


def test_split_is_stable_when_chips_are_added():
    small = split_train_val(_manifest(500), seed=7)
    big = split_train_val(_manifest(600), seed=7)
    moved = {c for c in small.train_ids if c in big.val_ids} | {
        c for c in small.val_ids if c in big.train_ids
    }
    # only ranks near the cut may change sides
    assert len(moved) <= 25


def test_split_needs_two_labeled():
    with pytest.raises(InsufficientData):
        split_train_val(_manifest(1))
    with pytest.raises(InsufficientData):
        split_train_val(_manifest(5, labeled=False))


def test_split_group_key_keeps_groups_together():
    manifest = _manifest(40)
    split = split_train_val(manifest, seed=3, group_key=lambda c: c[-1])
    for side in (split.train_ids, split.val_ids):
        groups = {c[-1] for c in side}
        other = split.val_ids if side is split.train_ids else split.train_ids
        assert not groups & {c[-1] for c in other}


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 300),
    seed=st.integers(0, 10_000),
    fraction=st.floats(0.05, 0.95),
)
def test_split_partition(n, seed, fraction):
    manifest = _manifest(n)
    split = split_train_val(manifest, seed, fraction)
    assert not split.train_ids & split.val_ids
    assert split.train_ids | split.val_ids == set(manifest.ids)
    expected = n * (1 - fraction)
    assert abs(len(split.val_ids) - expected) <= 1 or len(split.val_ids) in (1, n - 1)


def test_manifest_csv_round_trip(tmp_path):
    manifest = Manifest(
        (ManifestEntry("A1", tmp_path / "A1.tif", tmp_path / "A1m.tif"),)
        + (ManifestEntry("B2", tmp_path / "B2.tif"),)
        + (ManifestEntry("C3", tmp_path / "C3.tif", tmp_path / "C3m.tif"),)
    )
    split = split_train_val(manifest, seed=0, fraction=0.5)
    path = write_manifest_csv(manifest, tmp_path / "m.csv", split)
    with path.open() as fh:
        assert next(csv.reader(fh)) == ["chip_id", "image_path", "mask_path", "split"]
    back, splits = read_manifest_csv(path)
    assert back == manifest
    assert splits["B2"] == "test"
    assert sorted(splits.values()) == ["test", "train", "val"]
