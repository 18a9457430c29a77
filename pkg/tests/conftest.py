import os

import numpy as np
import pytest


def long_mode() -> bool:
    """Heavy optional studies run only when SPM_LONG=1 is set."""
    return os.environ.get("SPM_LONG", "") == "1"


requires_long = pytest.mark.skipif(
    not long_mode(), reason="set SPM_LONG=1 to run the long-mode studies"
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
