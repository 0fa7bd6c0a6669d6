"""Deterministic synthetic chips for tests, demos and CPU smoke runs.

Each chip has a sea background, an optional land region along one edge
(positive DEM, bright in every band), and a few elliptical kelp patches at
sea with raised NIR/SWIR1. The mask marks the kelp patches. A random false
"kelp-like" patch is placed on land so land masking has work to do.
"""

from pathlib import Path

import numpy as np

from .dataset import BAND_NAMES, make_chip, save_chip

_SEA = {"Blue": 8200, "Green": 7600, "Red": 7000, "NIR": 6600, "SWIR1": 6300, "CloudMask": 0}
_LAND = {"Blue": 13000, "Green": 14000, "Red": 15000, "NIR": 19000, "SWIR1": 21000, "CloudMask": 0}
_KELP = {"NIR": 11500, "SWIR1": 9800, "Green": 8200}


def _ellipse(size, rng, rmin, rmax):
    cy, cx = rng.uniform(0, size, 2)
    ry, rx = rng.uniform(rmin, rmax, 2)
    yy, xx = np.mgrid[:size, :size]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synthetic_chip(chip_id, size=64, seed=0, n_kelp=3, land=True, labeled=True):
    rng = np.random.default_rng(seed)
    bands = {name: np.full((size, size), float(_SEA.get(name, 0))) for name in BAND_NAMES}
    land_mask = np.zeros((size, size), dtype=bool)
    if land:
        depth = int(rng.integers(size // 8, size // 3))
        side = int(rng.integers(4))
        land_mask[:depth, :] = True
        land_mask = np.rot90(land_mask, side)
        for name, value in _LAND.items():
            bands[name][land_mask] = value
        bands["DEM"][land_mask] = rng.uniform(3, 120, land_mask.sum())

    kelp = np.zeros((size, size), dtype=bool)
    for _ in range(n_kelp):
        kelp |= _ellipse(size, rng, size / 16, size / 7)
    kelp &= ~land_mask
    for name, value in _KELP.items():
        bands[name][kelp] = value

    for name in ("Blue", "Green", "Red", "NIR", "SWIR1"):
        bands[name] += rng.normal(0, 250, (size, size))
    # Sprinkle missing-data pixels.
    missing = rng.random((size, size)) < 0.002
    stack = np.stack([bands[n] for n in BAND_NAMES])
    stack[:5, missing] = 0
    stack = np.clip(np.rint(stack), 0, 65535).astype(np.uint16)
    mask = kelp.astype(np.uint8) if labeled else None
    return make_chip(chip_id, stack, mask)


def synthetic_chips(n, size=64, seed=0, labeled=True, prefix="SC"):
    return [
        synthetic_chip(f"{prefix}{i:06d}", size=size, seed=seed * 100003 + i, labeled=labeled)
        for i in range(n)
    ]


def write_synthetic_dataset(root, n_train=8, n_test=0, size=64, seed=0):
    """Write labeled and unlabeled synthetic chips under ``root``; return the root."""
    root = Path(root)
    for chip in synthetic_chips(n_train, size, seed):
        save_chip(chip, root / "train")
    for chip in synthetic_chips(n_test, size, seed + 1, labeled=False, prefix="ST"):
        save_chip(chip, root / "test")
    return root
