import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from llg_galerkin.config import unit_field_from_angles
from llg_galerkin.grid import BoxDomain, Field

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cube8():
    return BoxDomain((1.0, 1.0, 1.0), (8, 8, 8))


@pytest.fixture
def cube16():
    return BoxDomain((1.0, 1.0, 1.0), (16, 16, 16))


def smooth_unit_field(domain, amp=0.6, seed=0):
    """Unit field from two low-frequency angle fields (cosine modes, random weights)."""
    rng = np.random.default_rng(seed)
    x = domain.coordinates()
    a = np.zeros(domain.resolution)
    b = np.zeros(domain.resolution)
    for i, xi in enumerate(x):
        w = np.pi / domain.lengths[i]
        a = a + amp * rng.normal() * np.cos(w * xi)
        b = b + 0.5 * amp * rng.normal() * np.cos(w * xi)
    return Field(domain, unit_field_from_angles(a, b))
