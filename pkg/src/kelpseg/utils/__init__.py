from .validation import (
    check_binary_mask,
    check_probability,
    check_probability_map,
    check_same_shape,
    check_size,
    check_square,
)

__all__ = [
    "check_binary_mask",
    "check_probability",
    "check_probability_map",
    "check_same_shape",
    "check_size",
    "check_square",
]
