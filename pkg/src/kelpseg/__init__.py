"""Kelp canopy segmentation for Landsat chips.

The functional API lives in the submodules (``dataset``, ``preprocess``,
``augment``, ``model``, ``train``, ``infer``, ``postprocess``, ``metrics``);
:class:`KelpSegmenter` and :class:`KelpEnsemble` wrap it as scikit-learn
estimators.
"""

from .dataset import BAND_NAMES, CHIP_SIZE, Chip, load_chip
from .estimator import KelpEnsemble, KelpSegmenter
from .metrics import ConfusionCounts, dataset_dice, dice_from_counts
from .preprocess import ChipPreprocessor, PreprocessConfig

__version__ = "0.1.0"

__all__ = [
    "BAND_NAMES",
    "CHIP_SIZE",
    "Chip",
    "ChipPreprocessor",
    "ConfusionCounts",
    "KelpEnsemble",
    "KelpSegmenter",
    "PreprocessConfig",
    "dataset_dice",
    "dice_from_counts",
    "load_chip",
]
