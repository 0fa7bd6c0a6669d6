"""Band selection, clip/scale/normalize and resizing of chips for the models."""

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import CHIP_SIZE
from .exceptions import InvalidSize, ShapeMismatch
from .utils import check_binary_mask, check_square

IMAGENET_MEANS = (0.485, 0.456, 0.406)
IMAGENET_STDS = (0.229, 0.224, 0.225)
TRAIN_BANDS = ("SWIR1", "NIR", "Green")


@dataclass(frozen=True)
class PreprocessConfig:
    """Preprocessing constants.

    ``channel_means[i]``/``channel_stds[i]`` normalize ``band_order[i]``.
    ``chip_size`` is the native raster side that scores are reported at and
    ``train_size`` the side the models see; the two only differ when
    enlarging.
    """

    clip_min: float = 6000.0
    clip_max: float = 24000.0
    channel_means: tuple = IMAGENET_MEANS
    channel_stds: tuple = IMAGENET_STDS
    band_order: tuple = TRAIN_BANDS
    train_size: int = 512
    chip_size: int = CHIP_SIZE

    def __post_init__(self):
        for name in ("channel_means", "channel_stds", "band_order"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.clip_min < self.clip_max:
            raise ValueError(f"clip_min ({self.clip_min}) must be < clip_max ({self.clip_max})")
        if self.clip_min <= 0:
            raise ValueError("clip_min must be positive; raw 0 is reserved for missing data")
        n = len(self.band_order)
        if n == 0 or len(self.channel_means) != n or len(self.channel_stds) != n:
            raise ValueError("band_order, channel_means and channel_stds must have equal length")
        if min(self.channel_stds) <= 0:
            raise ValueError("channel_stds must be strictly positive")
        if self.chip_size < 1:
            raise InvalidSize(f"chip_size must be positive, got {self.chip_size}")
        if self.train_size < self.chip_size:
            raise InvalidSize(
                f"train_size ({self.train_size}) must be >= chip_size ({self.chip_size})"
            )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True, eq=False)
class NormalizedSample:
    """Model-ready image ``(C, S, S)``, float mask ``(S, S)`` and validity ``(S, S)``."""

    image: np.ndarray
    mask: np.ndarray = None
    validity: np.ndarray = None
    chip_id: str = ""

    def __post_init__(self):
        shape = self.image.shape[-2:]
        if self.mask is not None and self.mask.shape != shape:
            raise ShapeMismatch(f"mask shape {self.mask.shape} != image {shape}")
        if self.validity is not None and self.validity.shape != shape:
            raise ShapeMismatch(f"validity shape {self.validity.shape} != image {shape}")

    @property
    def size(self):
        return self.image.shape[-1]


def scale_bands(raw, config=PreprocessConfig()):
    """Clip raw reflectances and divide by ``clip_max``.

    Returns the scaled float64 array (in ``[clip_min/clip_max, 1]``) and the
    validity mask; raw zeros are missing data and take the ``clip_min`` value.
    """
    raw = np.asarray(raw)
    validity = raw != 0
    values = np.where(validity, raw, config.clip_min).astype(np.float64)
    np.clip(values, config.clip_min, config.clip_max, out=values)
    values /= config.clip_max
    return values, validity


def normalize_bands(chip, config=PreprocessConfig()):
    """Return the ``(C, H, W)`` float32 image and the ``(H, W)`` validity mask.

    A pixel is valid only if every selected band is nonzero there.
    """
    raw = np.stack([chip.band(name) for name in config.band_order])
    scaled, validity = scale_bands(raw, config)
    means = np.asarray(config.channel_means, dtype=np.float64)[:, None, None]
    stds = np.asarray(config.channel_stds, dtype=np.float64)[:, None, None]
    image = ((scaled - means) / stds).astype(np.float32)
    return image, validity.all(axis=0)


def mask_to_float(binary_mask):
    return check_binary_mask(binary_mask).astype(np.float32)


def _interpolate(array, size, mode):
    tensor = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    squeeze = tensor.ndim == 2
    tensor = tensor[None, None] if squeeze else tensor[None]
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    out = F.interpolate(tensor, size=(size, size), mode=mode, **kwargs)[0]
    out = out[0] if squeeze else out
    return out.numpy()


def resize_image(image, target_size, mode="bicubic"):
    """Resize a ``(C, H, W)`` or ``(H, W)`` float array on its last two axes."""
    if image.shape[-1] == target_size and image.shape[-2] == target_size:
        return np.array(image, dtype=np.float32)
    return _interpolate(image, target_size, mode)


def resize_sample(image, mask=None, target_size=512, validity=None, chip_id=""):
    """Enlarge image (bicubic), float mask (bicubic then clamped) and validity (nearest)."""
    source = check_square(image, "image")
    if target_size < source:
        raise InvalidSize(
            f"resize_sample only enlarges ({source} -> {target_size}); "
            "use kelpseg.infer.resize_prob_to_original to downsize"
        )
    image = resize_image(image, target_size)
    if mask is not None:
        mask = np.asarray(mask)
        if not np.issubdtype(mask.dtype, np.floating):
            raise TypeError("mask must be floating point before resizing; see mask_to_float")
        mask = np.clip(resize_image(mask, target_size), 0.0, 1.0)
    if validity is not None:
        validity = (
            resize_image(np.asarray(validity, dtype=np.float32), target_size, "nearest") > 0.5
        )
    return NormalizedSample(image=image, mask=mask, validity=validity, chip_id=chip_id)


def preprocess_chip(chip, config=PreprocessConfig()):
    """Full chip -> :class:`NormalizedSample` at ``config.train_size``."""
    if chip.size != config.chip_size:
        raise ShapeMismatch(f"chip {chip.chip_id} is {chip.size}px, expected {config.chip_size}")
    image, validity = normalize_bands(chip, config)
    mask = mask_to_float(chip.mask) if chip.mask is not None else None
    return resize_sample(image, mask, config.train_size, validity, chip_id=chip.chip_id)


class ChipPreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer turning a list of chips into an ``(N, C, S, S)`` array.

    Parameters mirror :class:`PreprocessConfig`; ``fit`` only validates.
    """

    def __init__(
        self,
        clip_min=6000.0,
        clip_max=24000.0,
        channel_means=IMAGENET_MEANS,
        channel_stds=IMAGENET_STDS,
        band_order=TRAIN_BANDS,
        train_size=512,
        chip_size=CHIP_SIZE,
    ):
        self.clip_min = clip_min
        self.clip_max = clip_max
        self.channel_means = channel_means
        self.channel_stds = channel_stds
        self.band_order = band_order
        self.train_size = train_size
        self.chip_size = chip_size

    def _config(self):
        return PreprocessConfig(**self.get_params())

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        config = getattr(self, "config_", None) or self._config()
        return np.stack([preprocess_chip(chip, config).image for chip in X])

    def __sklearn_is_fitted__(self):
        return True
