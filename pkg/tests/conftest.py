import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvdistill.schedule import NoiseSchedule, build_schedule


def schedule_with_alpha_bar(alpha_bar: float) -> NoiseSchedule:
    """Single-step schedule whose alpha_bar_1 is exactly the given value."""
    return build_schedule(1, 1.0 - alpha_bar, 1.0 - alpha_bar)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
