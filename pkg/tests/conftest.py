import numpy as np
import pytest

from pnpcert import Image


def synthetic_grid(rows: int, cols: int) -> np.ndarray:
    """Deterministic test image: smooth waves plus a ramp, values in [0, 1]."""
    r = np.arange(rows)[:, None] / max(rows - 1, 1)
    c = np.arange(cols)[None, :] / max(cols - 1, 1)
    g = 0.5 + 0.3 * np.sin(4.0 * np.pi * r) * np.cos(6.0 * np.pi * c) + 0.2 * (c - 0.5)
    return np.clip(g, 0.0, 1.0)


def synthetic_image(rows: int, cols: int) -> Image:
    return Image.from_grid(synthetic_grid(rows, cols))


@pytest.fixture
def image16() -> Image:
    return synthetic_image(16, 16)


@pytest.fixture
def image32() -> Image:
    return synthetic_image(32, 32)
