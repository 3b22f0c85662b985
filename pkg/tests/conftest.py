import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def disk_bits(w, h, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def disk_rgb(w=200, h=200, r=50, inside=(40, 40, 40), outside=(200, 200, 200), cx=None, cy=None):
    from dermabcd.imaging import RgbImage

    cx = (w - 1) / 2 if cx is None else cx
    cy = (h - 1) / 2 if cy is None else cy
    bits = disk_bits(w, h, cx, cy, r)
    px = np.empty((h, w, 3), dtype=np.uint8)
    px[:] = outside
    px[bits] = inside
    return RgbImage(px), bits


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """48 synthetic lesions (12 melanoma) with reference masks."""
    from dermabcd.synthetic import make_dataset

    return make_dataset(tmp_path_factory.mktemp("synthetic"), n_melanoma=12, n_benign=36, seed=3)
