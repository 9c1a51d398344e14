import numpy as np
import pytest

from deblurlab import (
    DiscriminatorConfig,
    FeatureExtractorConfig,
    GeneratorConfig,
)


@pytest.fixture
def tiny_gen_config():
    return GeneratorConfig(base_channels=4, n_rfbs=1, rfb_channels=8)


@pytest.fixture
def tiny_disc_config():
    return DiscriminatorConfig(channel_plan=(4, 8))


@pytest.fixture
def tiny_extractor_config():
    return FeatureExtractorConfig(weights_source="random(2)", base_width=4)


def smooth_image(shape=(64, 64), seed=0):
    """Random low-frequency RGB image in [0, 1]; learnable and blur-friendly."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(6):
            fy, fx = rng.uniform(0.5, 4.0, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            img[:, :, c] += rng.uniform(0.2, 1.0) * np.sin(
                2 * np.pi * fy * yy + ph[0]
            ) * np.sin(2 * np.pi * fx * xx + ph[1])
    img -= img.min()
    img /= img.max()
    return img


@pytest.fixture
def sharp_image():
    return smooth_image()
