"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np

from ..exceptions import InvalidSize, NonBinaryMask, ShapeMismatch


def check_binary_mask(mask, name="mask"):
    """Return ``mask`` as an array after checking every value is 0 or 1."""
    mask = np.asarray(mask)
    if mask.size and not np.isin(mask, (0, 1)).all():
        bad = np.unique(mask[~np.isin(mask, (0, 1))])[:5]
        raise NonBinaryMask(f"{name} contains values outside {{0, 1}}: {bad.tolist()}")
    return mask


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeMismatch(f"{label} have different shapes: {shapes}")
    return shapes[0]


def check_square(array, name="array"):
    """Check the trailing two axes of ``array`` are equal; return that side."""
    shape = np.shape(array)
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ShapeMismatch(f"{name} must be square in its last two axes, got {shape}")
    return shape[-1]


def check_probability(value, name, *, open_interval=False):
    value = float(value)
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return value


def check_probability_map(prob, name="probabilities"):
    prob = np.asarray(prob)
    if not np.isfinite(prob).all():
        raise ValueError(f"{name} contains non-finite values")
    if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return prob


def check_size(size, *, minimum=1, name="size"):
    if int(size) != size or size < minimum:
        raise InvalidSize(f"{name} must be an integer >= {minimum}, got {size}")
    return int(size)
