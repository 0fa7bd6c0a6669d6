import pytest
import torch
from helpers import random_chip

from kelpseg.model import ArchitectureSpec, build_model

SPEC64 = ArchitectureSpec("REFERENCE_TINY", "REFERENCE", 64)


@pytest.fixture
def chip_factory():
    return random_chip


@pytest.fixture
def tiny_model():
    return build_model(SPEC64, seed=0).eval()


@pytest.fixture
def tiny_model64():
    return build_model(SPEC64, seed=0, dtype=torch.float64).eval()
