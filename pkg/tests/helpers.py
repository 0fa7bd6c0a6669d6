"""Fixtures and brute-force oracles shared by the module and acceptance tests."""

import numpy as np
import torch

from kelpseg.dataset import BAND_NAMES, make_chip
from kelpseg.metrics import ConfusionCounts, dice_from_counts


def random_chip(chip_id="AB000001", size=350, seed=0, labeled=True):
    rng = np.random.default_rng(seed)
    stack = rng.integers(0, 30000, size=(len(BAND_NAMES), size, size)).astype(np.uint16)
    mask = rng.integers(0, 2, size=(size, size)).astype(np.uint8) if labeled else None
    return make_chip(chip_id, stack, mask)


def brute_counts(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def brute_force_smooth(dem):
    h, w = dem.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            for di in range(2):
                for dj in range(2):
                    if i + di < h and j + dj < w:
                        out[i, j] += dem[i + di, j + dj]
    return out


def tta_brute_force(model, x):
    total = np.zeros(x.shape[-2:], np.float64)
    for hflip, vflip in ((False, False), (True, False), (False, True), (True, True)):
        xi = x.copy()
        if hflip:
            xi = xi[:, :, ::-1]
        if vflip:
            xi = xi[:, ::-1, :]
        with torch.no_grad():
            logit = model.forward(torch.from_numpy(xi.copy())[None])[0, 0].numpy()
        p = 1.0 / (1.0 + np.exp(-logit.astype(np.float64)))
        if vflip:
            p = p[::-1, :]
        if hflip:
            p = p[:, ::-1]
        total += p
    return total / 4


def sweep_fixture():
    """Positives sit just above 0.40 and a cluster of negatives just below it."""
    rng = np.random.default_rng(11)
    maps, truths, lands = [], [], []
    for _ in range(6):
        truth = np.zeros((20, 20), np.uint8)
        prob = rng.uniform(0.0, 0.3, (20, 20))
        pos = rng.choice(400, 40, replace=False)
        truth.flat[pos] = 1
        prob.flat[pos[:30]] = rng.uniform(0.40, 0.405, 30)
        prob.flat[pos[30:]] = rng.uniform(0.61, 0.9, 10)
        neg = np.flatnonzero(truth.ravel() == 0)
        decoys = rng.choice(neg, 25, replace=False)
        prob.flat[decoys[:20]] = rng.uniform(0.391, 0.3999, 20)
        # land pixels carry high probabilities that masking must remove
        land = np.zeros((20, 20), bool)
        land.flat[decoys[20:]] = True
        prob.flat[decoys[20:]] = 0.95
        maps.append(prob)
        truths.append(truth)
        lands.append(land)
    return maps, truths, lands


def brute_sweep(maps, truths, lands, grid):
    curve = []
    for t in grid:
        total = ConfusionCounts()
        for p, y, land in zip(maps, truths, lands):
            pred = (p >= t) & ~land
            total = total + brute_counts(pred.astype(int), y)
        curve.append((t, dice_from_counts(total)))
    return curve
