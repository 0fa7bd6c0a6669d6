"""Training-time augmentation: flips, quarter turns and rectangular holes.

Random draws are separated from their application (``draw_*`` vs ``apply_*``)
so a transform can be forced, replayed, or inspected.
"""

import hashlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from .utils import check_probability, check_square


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rot90_prob: float = 0.5
    holes_prob: float = 0.25
    holes_count_range: tuple = (1, 4)
    hole_size_range: tuple = (16, 64)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("flip_prob", "rot90_prob", "holes_prob"):
            check_probability(getattr(self, name), name)
        for name in ("holes_count_range", "hole_size_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got {(lo, hi)}")
            object.__setattr__(self, name, (int(lo), int(hi)))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class FlipRot:
    hflip: bool = False
    vflip: bool = False
    k: int = 0


@dataclass(frozen=True)
class Hole:
    top: int
    left: int
    height: int
    width: int


def sample_rng(seed, chip_id, epoch=0):
    """Independent generator per (seed, epoch, chip) so workers agree on draws."""
    digest = hashlib.sha256(f"{seed}:{epoch}:{chip_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def draw_flip_rot(rng, config=AugmentConfig()):
    hflip = bool(rng.random() < config.flip_prob)
    vflip = bool(rng.random() < config.flip_prob)
    k = int(rng.integers(1, 4)) if rng.random() < config.rot90_prob else 0
    return FlipRot(hflip, vflip, k)


def _spatial(array, op):
    return None if array is None else np.ascontiguousarray(op(array))


def apply_flip_rot(sample, params):
    """Apply the same flips/rotation to image, mask and validity."""

    def op(a):
        if params.hflip:
            a = a[..., ::-1]
        if params.vflip:
            a = a[..., ::-1, :]
        if params.k:
            a = np.rot90(a, params.k, axes=(-2, -1))
        return a

    if not (params.hflip or params.vflip or params.k):
        return sample
    return replace(
        sample,
        image=_spatial(sample.image, op),
        mask=_spatial(sample.mask, op),
        validity=_spatial(sample.validity, op),
    )


def random_flip_rot(sample, rng, config=AugmentConfig()):
    check_square(sample.image, "sample.image")
    return apply_flip_rot(sample, draw_flip_rot(rng, config))


def draw_holes(rng, size, config=AugmentConfig()):
    if rng.random() >= config.holes_prob:
        return []
    lo, hi = config.hole_size_range
    if hi >= size:
        raise ValueError(
            f"hole_size_range {config.hole_size_range} must be below image size {size}"
        )
    n = int(rng.integers(config.holes_count_range[0], config.holes_count_range[1] + 1))
    holes = []
    for _ in range(n):
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, size - h + 1))
        left = int(rng.integers(0, size - w + 1))
        holes.append(Hole(top, left, h, w))
    return holes


def apply_holes(sample, holes):
    """Zero the image channels and mask inside every hole."""
    if not holes:
        return sample
    image = np.array(sample.image, copy=True)
    mask = None if sample.mask is None else np.array(sample.mask, copy=True)
    for hole in holes:
        rows = slice(hole.top, hole.top + hole.height)
        cols = slice(hole.left, hole.left + hole.width)
        image[..., rows, cols] = 0
        if mask is not None:
            mask[rows, cols] = 0
    return replace(sample, image=image, mask=mask)


def random_holes(sample, rng, config=AugmentConfig()):
    size = check_square(sample.image, "sample.image")
    return apply_holes(sample, draw_holes(rng, size, config))


def augment_sample(sample, rng, config=AugmentConfig()):
    return random_holes(random_flip_rot(sample, rng, config), rng, config)
