"""Dataset-level Dice, pixel confusion accounting and threshold search.

Dice is pooled: confusion counts are summed over every pixel of every chip
before the ratio is taken, never averaged per image.
"""

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import EmptyDataset, InconsistentTotals
from .postprocess import binarize
from .utils import check_binary_mask, check_same_shape

DEFAULT_SWEEP_GRID = tuple(round(0.30 + 0.01 * i, 2) for i in range(31))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def dice(self):
        return dice_from_counts(self)

    def to_dict(self):
        return asdict(self)


def confusion_counts(pred_mask, truth_mask):
    pred = check_binary_mask(pred_mask, "pred_mask").astype(bool)
    truth = check_binary_mask(truth_mask, "truth_mask").astype(bool)
    check_same_shape(pred, truth, names=("pred_mask", "truth_mask"))
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def dice_from_counts(counts):
    """``2 TP / (2 TP + FP + FN)``; 1.0 when nothing is predicted or present."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def dice_from_sets(pred_mask, truth_mask):
    """``2 |A n B| / (|A| + |B|)`` computed directly on the two masks."""
    a = np.asarray(truth_mask).astype(bool)
    b = np.asarray(pred_mask).astype(bool)
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2 * int((a & b).sum()) / size


def _sum_counts(pairs):
    total, n = ConfusionCounts(), 0
    for pred, truth in pairs:
        total = total + confusion_counts(pred, truth)
        n += 1
    if n == 0:
        raise EmptyDataset("no (prediction, truth) pairs to score")
    return total


def dataset_counts(pairs):
    return _sum_counts(pairs)


def dataset_dice(pairs):
    return dice_from_counts(_sum_counts(pairs))


@dataclass(frozen=True)
class PixelReport:
    counts: ConfusionCounts
    total_pixels: int
    total_percent: dict
    kelp_percent: dict
    dice: float

    def rows(self):
        labels = [
            ("True Negative", "tn"),
            ("True Positive", "tp"),
            ("False Negative", "fn"),
            ("False Positive", "fp"),
        ]
        for label, key in labels:
            yield (
                label,
                key,
                getattr(self.counts, key),
                self.total_percent[key],
                self.kelp_percent.get(key),
            )

    def to_table(self):
        lines = [f"{'':<16}{'Num Pixels':>14}{'Total pixel percent':>22}{'percent of Kelps':>19}"]
        for label, _, n, tot, kelp in self.rows():
            kelp_s = f"{kelp:.3f}" if kelp is not None else ""
            lines.append(f"{label:<16}{n:>14d}{tot:>22.3f}{kelp_s:>19}")
        lines.append(f"Dice coefficient: {self.dice:.4f}")
        return "\n".join(lines)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "num_pixels", "total_percent", "kelp_percent"])
            for _, key, n, tot, kelp in self.rows():
                writer.writerow([key, n, repr(tot), "" if kelp is None else repr(kelp)])
            writer.writerow(["dice", "", repr(self.dice), ""])
        return path


def pixel_report(counts, total_pixels=None):
    """Percentages of every confusion cell, and TP/FN as shares of true kelp."""
    total = counts.total if total_pixels is None else int(total_pixels)
    if total != counts.total:
        raise InconsistentTotals(f"counts sum to {counts.total} but total_pixels is {total}")
    if total == 0:
        raise InconsistentTotals("no pixels to report on")
    kelp = counts.tp + counts.fn
    total_percent = {k: 100.0 * getattr(counts, k) / total for k in ("tn", "tp", "fn", "fp")}
    kelp_percent = {}
    if kelp:
        kelp_percent = {"tp": 100.0 * counts.tp / kelp, "fn": 100.0 * counts.fn / kelp}
    return PixelReport(counts, total, total_percent, kelp_percent, dice_from_counts(counts))


def read_counts_csv(path):
    """Read ``tp,fp,fn,tn`` from a one-row CSV (header required)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyDataset(f"{path} has no rows")
    row = rows[0]
    return ConfusionCounts(*(int(row[k]) for k in ("tp", "fp", "fn", "tn")))


def write_counts_csv(counts, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tp", "fp", "fn", "tn"])
        writer.writerow([counts.tp, counts.fp, counts.fn, counts.tn])
    return path


def threshold_sweep(probability_maps, truth_masks, land_indicators=None, grid=DEFAULT_SWEEP_GRID):
    """Pooled Dice at each threshold of ``grid`` after land masking.

    Returns ``(best_threshold, [(threshold, dice), ...])``; ties go to the
    larger threshold.
    """
    probability_maps = list(probability_maps)
    truth_masks = list(truth_masks)
    if not probability_maps:
        raise EmptyDataset("threshold_sweep needs at least one map")
    if len(truth_masks) != len(probability_maps):
        raise ValueError("probability_maps and truth_masks differ in length")
    if land_indicators is None:
        land_indicators = [None] * len(probability_maps)
    land_indicators = list(land_indicators)
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    if grid != sorted(grid):
        raise ValueError("threshold grid must be sorted ascending")

    curve = []
    for threshold in grid:
        pairs = (
            (binarize(p, threshold, land), t)
            for p, t, land in zip(probability_maps, truth_masks, land_indicators)
        )
        curve.append((threshold, dataset_dice(pairs)))
    best = max(curve, key=lambda item: (item[1], item[0]))[0]
    return best, curve


def write_curve_csv(curve, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "dice"])
        for threshold, dice in curve:
            writer.writerow([f"{threshold:.4f}", repr(dice)])
    return path
