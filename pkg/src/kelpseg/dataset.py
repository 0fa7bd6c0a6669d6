"""Chip ingestion, manifests, curated exclusions and train/validation splits.

On-disk layout
--------------
One chip is two TIFF files sharing a ``chip_id`` stem::

    <root>/**/<chip_id>_satellite.tif   # 7 bands, uint16, planar (7, H, W) or (H, W, 7)
    <root>/**/<chip_id>_kelp.tif        # 1 band, uint8, values {0, 1}

Band order inside the satellite file is :data:`BAND_NAMES`. Images without
a partner mask are unlabeled (test) chips.
"""

import csv
import hashlib
import logging
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
import tifffile

from .exceptions import (
    DuplicateChipId,
    EmptyDirectory,
    InsufficientData,
    MissingBand,
    ShapeMismatch,
)
from .utils import check_binary_mask

logger = logging.getLogger(__name__)

BAND_NAMES = ("Blue", "Green", "Red", "NIR", "SWIR1", "CloudMask", "DEM")
CHIP_SIZE = 350
IMAGE_SUFFIX = "_satellite"
MASK_SUFFIX = "_kelp"


@dataclass(frozen=True, eq=False)
class Chip:
    """One scene: seven named integer rasters plus an optional binary mask."""

    chip_id: str
    bands: Mapping[str, np.ndarray]
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        names = tuple(self.bands)
        if sorted(names) != sorted(BAND_NAMES):
            missing = sorted(set(BAND_NAMES) - set(names))
            extra = sorted(set(names) - set(BAND_NAMES))
            raise MissingBand(
                f"chip {self.chip_id}: bands must be exactly {BAND_NAMES}; "
                f"missing {missing}, unexpected {extra}"
            )
        shapes = {np.shape(b) for b in self.bands.values()}
        if len(shapes) != 1:
            raise ShapeMismatch(f"chip {self.chip_id}: band shapes differ: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ShapeMismatch(f"chip {self.chip_id}: bands must be square 2-D, got {shape}")
        if self.mask is not None:
            if np.shape(self.mask) != shape:
                raise ShapeMismatch(
                    f"chip {self.chip_id}: mask shape {np.shape(self.mask)} != band shape {shape}"
                )
            check_binary_mask(self.mask, name=f"chip {self.chip_id} mask")

    @property
    def size(self):
        return next(iter(self.bands.values())).shape[0]

    def band(self, name):
        try:
            return self.bands[name]
        except KeyError:
            raise MissingBand(f"chip {self.chip_id} has no band {name!r}") from None

    def stack(self, names=BAND_NAMES):
        return np.stack([self.band(n) for n in names])


@dataclass(frozen=True)
class ManifestEntry:
    chip_id: str
    image_path: Path
    mask_path: Optional[Path] = None

    @property
    def labeled(self):
        return self.mask_path is not None


@dataclass(frozen=True)
class Manifest:
    entries: tuple
    excluded_ids: frozenset = frozenset()

    def __post_init__(self):
        ids = [e.chip_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateChipId(f"duplicate chip ids in manifest: {dupes}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self):
        return [e.chip_id for e in self.entries]

    @property
    def labeled(self):
        return [e for e in self.entries if e.labeled]

    def get(self, chip_id):
        for entry in self.entries:
            if entry.chip_id == chip_id:
                return entry
        raise KeyError(chip_id)


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: frozenset
    val_ids: frozenset
    seed: int
    fraction: float

    def split_of(self, chip_id):
        if chip_id in self.train_ids:
            return "train"
        if chip_id in self.val_ids:
            return "val"
        return "test"


def _read_raster(path):
    arr = tifffile.imread(str(path))
    return np.asarray(arr)


def load_chip(image_path, mask_path=None, *, chip_id=None, expected_size=CHIP_SIZE):
    """Read a 7-band satellite TIFF (and mask) into a :class:`Chip`.

    ``expected_size`` pins the raster side; pass ``None`` to accept any
    square size (synthetic fixtures use 64).
    """
    image_path = Path(image_path)
    arr = _read_raster(image_path)
    n = len(BAND_NAMES)
    if arr.ndim == 3 and arr.shape[0] != n and arr.shape[-1] == n:
        arr = np.moveaxis(arr, -1, 0)
    if arr.ndim != 3 or arr.shape[0] != n:
        raise MissingBand(f"{image_path}: expected {n} bands, got array of shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{image_path}: bands must be integer rasters, got {arr.dtype}")
    if expected_size is not None and arr.shape[1:] != (expected_size, expected_size):
        raise ShapeMismatch(
            f"{image_path}: rasters must be {expected_size}x{expected_size}, got {arr.shape[1:]}"
        )
    if chip_id is None:
        chip_id = chip_id_from_path(image_path, IMAGE_SUFFIX)
    bands = {name: np.ascontiguousarray(arr[i]) for i, name in enumerate(BAND_NAMES)}

    mask = None
    if mask_path is not None:
        mask = _read_raster(mask_path)
        if mask.ndim == 3 and 1 in (mask.shape[0], mask.shape[-1]):
            mask = mask.reshape(mask.shape[1:] if mask.shape[0] == 1 else mask.shape[:-1])
        if mask.shape != arr.shape[1:]:
            raise ShapeMismatch(f"{mask_path}: mask shape {mask.shape} != image {arr.shape[1:]}")
        mask = check_binary_mask(mask, name=str(mask_path)).astype(np.uint8)
    return Chip(chip_id=chip_id, bands=bands, mask=mask)


def save_chip(chip, directory):
    """Write ``chip`` in the layout read by :func:`build_manifest`; return paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image_path = directory / f"{chip.chip_id}{IMAGE_SUFFIX}.tif"
    tifffile.imwrite(str(image_path), chip.stack().astype(np.uint16), photometric="minisblack")
    mask_path = None
    if chip.mask is not None:
        mask_path = directory / f"{chip.chip_id}{MASK_SUFFIX}.tif"
        tifffile.imwrite(str(mask_path), np.asarray(chip.mask, dtype=np.uint8))
    return image_path, mask_path


def chip_id_from_path(path, suffix):
    stem = Path(path).name
    if stem.lower().endswith((".tif", ".tiff")):
        stem = stem.rsplit(".", 1)[0]
    if suffix and stem.endswith(suffix):
        stem = stem[: -len(suffix)]
    return stem


def build_manifest(root_directory, *, image_suffix=IMAGE_SUFFIX, mask_suffix=MASK_SUFFIX):
    """Pair every ``*<image_suffix>.tif`` under ``root_directory`` with its mask."""
    root = Path(root_directory)
    if not root.is_dir():
        raise EmptyDirectory(f"{root} is not a directory")
    images, masks = {}, {}
    for path in sorted(root.rglob("*.tif*")):
        stem = path.name.rsplit(".", 1)[0]
        if stem.endswith(image_suffix):
            table = images
            chip_id = stem[: -len(image_suffix)]
        elif stem.endswith(mask_suffix):
            table = masks
            chip_id = stem[: -len(mask_suffix)]
        else:
            continue
        if chip_id in table:
            raise DuplicateChipId(f"chip id {chip_id!r} found at {table[chip_id]} and {path}")
        table[chip_id] = path
    if not images:
        raise EmptyDirectory(f"no '*{image_suffix}.tif' files under {root}")
    orphans = sorted(set(masks) - set(images))
    if orphans:
        warnings.warn(f"{len(orphans)} mask(s) without image ignored: {orphans[:5]}", stacklevel=2)
    entries = tuple(
        ManifestEntry(chip_id, images[chip_id], masks.get(chip_id)) for chip_id in sorted(images)
    )
    return Manifest(entries)


def default_exclusions():
    """The nine validation chips with gross annotation errors."""
    text = resources.files("kelpseg").joinpath("data/excluded_chips.txt").read_text()
    return read_exclusions_text(text)


def read_exclusions_text(text):
    ids = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.append(line)
    return frozenset(ids)


def read_exclusions(path):
    return read_exclusions_text(Path(path).read_text())


def apply_exclusions(manifest, exclusion_ids):
    exclusion_ids = frozenset(exclusion_ids)
    present = set(manifest.ids)
    unknown = sorted(exclusion_ids - present - manifest.excluded_ids)
    if unknown:
        warnings.warn(f"exclusion ids not in manifest: {unknown}", stacklevel=2)
    removed = exclusion_ids & present
    entries = tuple(e for e in manifest.entries if e.chip_id not in removed)
    return Manifest(entries, manifest.excluded_ids | removed)


def _unit_hash(key, seed):
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def split_train_val(manifest, seed=42, fraction=0.8, *, group_key: Callable[[str], str] = None):
    """Deterministic split of the labeled chips; ``fraction`` goes to training.

    Chips are ordered by a seeded SHA-256 of their id (or of ``group_key(id)``
    so whole groups move together) and the lowest ``round(n * (1 - fraction))``
    become validation. A chip's rank depends only on its own id, so growing
    the manifest shifts at most the chips near the cut.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    ids = sorted(e.chip_id for e in manifest.labeled)
    if len(ids) < 2:
        raise InsufficientData(f"need at least 2 labeled chips to split, got {len(ids)}")
    n_val = min(max(round(len(ids) * (1.0 - fraction)), 1), len(ids) - 1)

    if group_key is None:
        ranked = sorted(ids, key=lambda i: (_unit_hash(i, seed), i))
        val = set(ranked[:n_val])
    else:
        groups = {}
        for chip_id in ids:
            groups.setdefault(group_key(chip_id), []).append(chip_id)
        val = set()
        for key in sorted(groups, key=lambda g: (_unit_hash(g, seed), g)):
            if len(val) >= n_val:
                break
            val.update(groups[key])
        if len(val) == len(ids):
            raise InsufficientData("grouping leaves no chips for training")
    train = frozenset(ids) - val
    return SplitAssignment(frozenset(train), frozenset(val), seed, fraction)


def write_manifest_csv(manifest, path, split=None):
    """Export ``chip_id,image_path,mask_path,split``; split is train/val/test."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chip_id", "image_path", "mask_path", "split"])
        for e in manifest.entries:
            if split is not None:
                which = split.split_of(e.chip_id)
            else:
                which = "" if e.labeled else "test"
            writer.writerow([e.chip_id, str(e.image_path), str(e.mask_path or ""), which])
    return path


def read_manifest_csv(path):
    """Inverse of :func:`write_manifest_csv`: returns ``(manifest, {chip_id: split})``."""
    entries, splits = [], {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            mask = Path(row["mask_path"]) if row["mask_path"] else None
            entries.append(ManifestEntry(row["chip_id"], Path(row["image_path"]), mask))
            splits[row["chip_id"]] = row["split"]
    return Manifest(tuple(entries)), splits


def load_entries(entries, *, expected_size=CHIP_SIZE, workers=None):
    """Load many manifest entries, optionally on a thread pool."""
    entries = list(entries)

    def _load(e):
        return load_chip(e.image_path, e.mask_path, chip_id=e.chip_id, expected_size=expected_size)

    if workers and workers > 1 and len(entries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_load, entries))
    return [_load(e) for e in entries]


def make_chip(chip_id, stack, mask=None):
    """Build a :class:`Chip` from a ``(7, H, W)`` array in :data:`BAND_NAMES` order."""
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] != len(BAND_NAMES):
        raise MissingBand(f"expected ({len(BAND_NAMES)}, H, W) stack, got {stack.shape}")
    return Chip(chip_id, {n: stack[i] for i, n in enumerate(BAND_NAMES)}, mask)
