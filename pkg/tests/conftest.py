import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chrono_shield.raster import RasterImage

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def flat_image(value: int, width: int = 8, height: int = 8, channels: int = 3) -> RasterImage:
    return RasterImage(np.full((height, width, channels), value, dtype=np.uint8))


def random_image(rng: np.random.Generator, width: int, height: int, channels: int = 3) -> RasterImage:
    return RasterImage(rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))
