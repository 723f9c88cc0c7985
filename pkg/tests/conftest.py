import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdmpcert.constants import build_ledger
from pdmpcert.model import build_model

settings.register_profile(
    "pdmpcert", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pdmpcert")

# closed-form constants of the default LM1D model
E = math.e
C_MIN = 2 * E + 4
DELTA_B4 = (1 - math.exp(-2)) / 2


@pytest.fixture(scope="session")
def lm():
    return build_model("lm1d")


@pytest.fixture(scope="session")
def lm_numeric():
    return build_model("lm1d_numeric")


@pytest.fixture(scope="session")
def ledger(lm):
    return build_ledger(lm)


def lm1d_flow(t, y, i):
    """Independent closed form of the LM1D flows: targets 0 and 1, unit decay."""
    m = 0.0 if i == 1 else 1.0
    return m + (y - m) * np.exp(-t)


def lm1d_intensity(y):
    return 1.0 + 1.0 / (1.0 + y)
