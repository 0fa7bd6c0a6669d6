"""Probability maps to binary kelp masks: DEM smoothing, land masking, threshold."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile
from scipy.signal import convolve2d
from sklearn.base import BaseEstimator

from .utils import check_probability, check_same_shape

DEFAULT_THRESHOLD = 0.43


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = DEFAULT_THRESHOLD
    dem_kernel: tuple = ((1, 1), (1, 1))
    # Land is where the smoothed DEM exceeds this many meters.
    land_above: float = 0.0
    use_land_mask: bool = True

    def __post_init__(self):
        check_probability(self.threshold, "threshold", open_interval=True)
        kernel = np.asarray(self.dem_kernel)
        if kernel.ndim != 2 or kernel.size == 0:
            raise ValueError("dem_kernel must be a non-empty 2-D array")
        object.__setattr__(self, "dem_kernel", tuple(tuple(r) for r in kernel.tolist()))

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "dem_kernel": [list(r) for r in self.dem_kernel],
            "land_above": self.land_above,
            "use_land_mask": self.use_land_mask,
        }


@dataclass(frozen=True, eq=False)
class BinaryMask:
    chip_id: str
    values: np.ndarray


def smooth_dem(dem, kernel=((1, 1), (1, 1))):
    """Sum of each pixel's kernel window anchored at its top-left corner.

    With the default 2x2 ones kernel, ``out[i, j] = dem[i:i+2, j:j+2].sum()``,
    zero-padded past the last row and column so the shape is unchanged.
    """
    dem = np.asarray(dem, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    full = convolve2d(dem, kernel[::-1, ::-1], mode="full")
    h, w = dem.shape
    return full[kh - 1 : kh - 1 + h, kw - 1 : kw - 1 + w]


def land_sea_mask(smoothed_dem, land_above=0.0):
    """Boolean land indicator: smoothed elevation strictly above ``land_above``."""
    return np.asarray(smoothed_dem) > land_above


def binarize(probability_map, config=DEFAULT_THRESHOLD, land_indicator=None):
    """Kelp where ``p >= threshold`` and the pixel is sea. ``config`` may be a float."""
    threshold = config.threshold if isinstance(config, PostprocessConfig) else float(config)
    prob = np.asarray(probability_map)
    out = prob >= threshold
    if land_indicator is not None:
        check_same_shape(prob, land_indicator, names=("probability_map", "land_indicator"))
        out &= ~np.asarray(land_indicator, dtype=bool)
    return out.astype(np.uint8)


def land_from_chip(chip, config=PostprocessConfig()):
    return land_sea_mask(smooth_dem(chip.band("DEM"), config.dem_kernel), config.land_above)


def postprocess(probability_map, dem=None, config=PostprocessConfig(), chip_id=""):
    land = None
    if dem is not None and config.use_land_mask:
        land = land_sea_mask(smooth_dem(dem, config.dem_kernel), config.land_above)
    return BinaryMask(chip_id, binarize(probability_map, config, land))


def write_mask(mask, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(str(path), np.asarray(mask, dtype=np.uint8))
    return path


def read_mask(path):
    return np.asarray(tifffile.imread(str(path)), dtype=np.uint8)


def rle_encode(mask):
    """Run-length encode in column-major order, 1-indexed ``start length`` pairs."""
    flat = np.asarray(mask, dtype=np.uint8).flatten(order="F")
    padded = np.concatenate([[0], flat, [0]])
    edges = np.flatnonzero(padded[1:] != padded[:-1]) + 1
    starts, ends = edges[::2], edges[1::2]
    return " ".join(f"{s} {e - s}" for s, e in zip(starts, ends))


def rle_decode(text, shape):
    flat = np.zeros(shape[0] * shape[1], dtype=np.uint8)
    tokens = [int(t) for t in text.split()]
    for start, length in zip(tokens[::2], tokens[1::2]):
        flat[start - 1 : start - 1 + length] = 1
    return flat.reshape(shape, order="F")


def write_rle_csv(masks, path):
    """``masks`` maps chip_id -> binary array; writes ``chip_id,height,width,rle``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chip_id", "height", "width", "rle"])
        for chip_id in sorted(masks):
            mask = np.asarray(masks[chip_id])
            writer.writerow([chip_id, mask.shape[0], mask.shape[1], rle_encode(mask)])
    return path


def read_rle_csv(path):
    with Path(path).open(newline="") as fh:
        return {
            row["chip_id"]: rle_decode(row["rle"], (int(row["height"]), int(row["width"])))
            for row in csv.DictReader(fh)
        }


class LandSeaThresholder(BaseEstimator):
    """Stateless estimator: ``predict`` binarizes probability maps with DEM masking.

    ``X`` is a sequence of ``(probability_map, dem)`` pairs (``dem`` may be None).
    """

    def __init__(self, threshold=DEFAULT_THRESHOLD, land_above=0.0, use_land_mask=True):
        self.threshold = threshold
        self.land_above = land_above
        self.use_land_mask = use_land_mask

    def fit(self, X=None, y=None):
        self.config_ = PostprocessConfig(
            threshold=self.threshold, land_above=self.land_above, use_land_mask=self.use_land_mask
        )
        return self

    def predict(self, X):
        config = getattr(self, "config_", None) or self.fit().config_
        return np.stack([postprocess(p, dem, config).values for p, dem in X])
