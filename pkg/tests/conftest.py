import math

import numpy as np
import pytest
from hypothesis import settings

from catoptra.lens import MirrorPairConfig, min_d2, min_h2
from catoptra.unfolding import build_rig

settings.register_profile("catoptra", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("catoptra")


def margined(alpha1_deg, alpha2_deg, h1=1.0, d1=0.05, h2_margin=1.05, d2_margin=1.05):
    """A pair with h2/d2 just above their minimal values."""
    base = MirrorPairConfig.from_degrees(alpha1_deg, alpha2_deg, h1, 1.0, d1, 2 * d1)
    return base.replace(h2=h2_margin * min_h2(base), d2=d1 + d2_margin * (min_d2(base) - d1))


def random_config(rng, h1_range=(0.2, 3.0)):
    """Random pair satisfying every condition (2*delta_alpha within (1, 80) degrees)."""
    while True:
        a1 = rng.uniform(46.0, 85.0)
        da = rng.uniform(0.5, 40.0)
        if a1 + da < 89.0:
            break
    h1 = rng.uniform(*h1_range)
    return margined(a1, a1 + da, h1, rng.uniform(0.01, 0.3) * h1,
                    rng.uniform(1.0, 1.5), rng.uniform(1.0, 1.5))


@pytest.fixture(scope="session")
def design_b():
    return margined(60.0, 85.0)


@pytest.fixture(scope="session")
def design_a():
    return margined(75.0, 85.0, h1=math.tan(math.radians(75.0)))


@pytest.fixture(scope="session")
def small_rig(design_b):
    return build_rig(design_b, resolution=48)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
