import numpy as np
import pytest

from anchorlens.anchors import PyramidConfig, PyramidLevel, generate_anchors
from anchorlens.geometry import BBox, ImageExtent


@pytest.fixture
def eleven_config():
    """2x2 grid with 2 templates plus a 1x1 grid with 3 templates."""
    return PyramidConfig(
        (
            PyramidLevel(2, 2, 50.0, 50.0, ((40.0, 40.0), (56.0, 28.0))),
            PyramidLevel(1, 1, 100.0, 100.0, ((70.0, 70.0), (90.0, 45.0), (45.0, 90.0))),
        ),
        ImageExtent(100, 100),
    )


@pytest.fixture
def eleven_anchors(eleven_config):
    return generate_anchors(eleven_config)


def random_box(rng, lo=0.0, hi=100.0, min_size=1.0):
    x0, y0 = rng.uniform(lo, hi - min_size, size=2)
    w, h = rng.uniform(min_size, hi - lo, size=2)
    return BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
