import hypothesis
import numpy as np
import pytest
import torch

from ddest.channel import SamplingGrid

hypothesis.settings.register_profile(
    "default", max_examples=30, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("default")

torch.set_num_threads(2)


@pytest.fixture
def desk_grid():
    """Desk-scale sampling geometry: 256 x 64, centered frequency axis."""
    return SamplingGrid.centered(256, 64, 625e3, 64e-6)


@pytest.fixture
def small_grid():
    return SamplingGrid.centered(16, 8, 1e6, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
