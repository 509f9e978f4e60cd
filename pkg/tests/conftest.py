import numpy as np
import pytest

from skedit.data_pipeline import PhantomSpec, generate_phantom


def circle_contour(size: int, center: tuple[int, int], radius: int) -> np.ndarray:
    """1-px circle contour rasterized as boundary of the filled disk."""
    from skedit.sketch_synthesis import extract_edges

    yy, xx = np.mgrid[0:size, 0:size]
    disk = ((yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2).astype(np.uint8)
    return extract_edges(disk)


def filled_disk(size: int, center: tuple[int, int], radius: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2).astype(np.uint8)


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomSpec(seed=7))
