import numpy as np
import pytest

from idnsr.imaging import ImagePlane
from idnsr.model import IdnConfig


@pytest.fixture
def tiny_config():
    """Smallest architecture that still exercises every wiring rule."""
    return IdnConfig(scale=2, num_dblocks=1, d3=8, d=2, s=4, groups=2, feat_channels=8)


@pytest.fixture
def camera_plane():
    """A real photograph (512x512 gray) for end-to-end pipeline tests."""
    from skimage import data

    return ImagePlane(data.camera().astype(np.float64) / 255.0, "gray")
