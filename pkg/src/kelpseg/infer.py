"""Flip test-time augmentation, resizing to chip resolution and ensembling."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile
import torch
import torch.nn.functional as F

from .dataset import CHIP_SIZE
from .exceptions import EmptyGroup, InvalidSize, ShapeMismatch
from .utils import check_same_shape, check_square

# (hflip, vflip) for identity, horizontal, vertical, both.
FLIP_STATES = ((False, False), (True, False), (False, True), (True, True))


def flip(x, hflip, vflip):
    """Flip the last (width) and/or second-to-last (height) axis of a tensor or array."""
    dims = [d for d, on in ((-1, hflip), (-2, vflip)) if on]
    if not dims:
        return x
    if torch.is_tensor(x):
        return torch.flip(x, dims)
    return np.flip(x, axis=tuple(dims))


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    chip_id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.isfinite(values).all() or values.min() < 0 or values.max() > 1:
            raise ValueError(f"probabilities for {self.chip_id} must be finite and in [0, 1]")


@torch.no_grad()
def predict_tta(model, normalized_image, flips=FLIP_STATES):
    """Sigmoid probabilities averaged over the four flip states.

    Accepts ``(3, S, S)`` or ``(B, 3, S, S)``; returns ``(S, S)`` or ``(B, S, S)``.
    """
    x = torch.as_tensor(np.ascontiguousarray(normalized_image))
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (3, S, S) or (B, 3, S, S), got {tuple(x.shape)}")
    model.eval()
    total = None
    for hflip, vflip in flips:
        prob = torch.sigmoid(model.forward(flip(x, hflip, vflip)))
        prob = flip(prob, hflip, vflip)
        total = prob if total is None else total + prob
    out = (total / len(flips))[:, 0].cpu().numpy()
    return out[0] if single else out


@torch.no_grad()
def predict_single(model, normalized_image):
    """One forward pass without augmentation; same shapes as :func:`predict_tta`."""
    return predict_tta(model, normalized_image, flips=FLIP_STATES[:1])


def resize_prob_to_original(prob, size=CHIP_SIZE):
    """Bilinear downsizing of ``(S, S)`` or ``(B, S, S)`` maps, clamped to [0, 1]."""
    prob = np.asarray(prob, dtype=np.float32)
    side = check_square(prob, "probability map")
    if side < size:
        raise InvalidSize(f"cannot downsize a {side}px map to {size}px")
    if side == size:
        return np.clip(prob, 0.0, 1.0)
    t = torch.from_numpy(np.ascontiguousarray(prob))
    single = t.ndim == 2
    t = t[None, None] if single else t[:, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)[:, 0]
    out = out[0] if single else out
    return np.clip(out.numpy(), 0.0, 1.0)


@dataclass(frozen=True)
class EnsembleGroup:
    name: str
    members: tuple
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise EmptyGroup(f"ensemble group {self.name!r} has no members")
        if not self.weight > 0:
            raise ValueError(f"ensemble group {self.name!r} weight must be > 0")


@dataclass(frozen=True)
class EnsembleSpec:
    groups: tuple

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise EmptyGroup("an ensemble needs at least one group")

    @property
    def members(self):
        return [m for g in self.groups for m in g.members]

    def to_dict(self):
        return {
            "groups": [
                {"name": g.name, "members": list(g.members), "weight": g.weight}
                for g in self.groups
            ]
        }

    @classmethod
    def from_dict(cls, data):
        groups = (
            EnsembleGroup(g["name"], tuple(g["members"]), g["weight"]) for g in data["groups"]
        )
        return cls(tuple(groups))


def paper_ensemble_spec(mit_ids, convnext_ids):
    """MIT group weighted 5, ConvNeXt group weighted 3."""
    return EnsembleSpec(
        (
            EnsembleGroup("mit", tuple(mit_ids), 5.0),
            EnsembleGroup("convnext", tuple(convnext_ids), 3.0),
        )
    )


def ensemble(per_model_maps, spec):
    """Weighted mean of per-group mean maps: ``sum_g w_g mean_g / sum_g w_g``.

    Accumulates in float64 and returns float32, the dtype maps are stored in.
    """
    missing = [m for m in spec.members if m not in per_model_maps]
    if missing:
        raise KeyError(f"no probability map for ensemble members {missing}")
    check_same_shape(*(per_model_maps[m] for m in spec.members), names=tuple(spec.members))
    out = 0.0
    total_weight = 0.0
    for group in spec.groups:
        stack = [np.asarray(per_model_maps[m], dtype=np.float64) for m in group.members]
        out = out + group.weight * np.mean(stack, axis=0)
        total_weight += group.weight
    return (out / total_weight).astype(np.float32)


def write_probability(values, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(str(path), np.asarray(values, dtype=np.float32))
    return path


def read_probability(path):
    return np.asarray(tifffile.imread(str(path)), dtype=np.float32)
