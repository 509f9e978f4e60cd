"""Pseudo-hand-drawn sketch synthesis from segmentation masks.

A training pair is (S*, E): E is the clean one-pixel boundary of the mask,
S* the morphologically perturbed and elastically deformed counterpart that
stands in for a free-hand sketch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import (
    binary_dilation,
    binary_erosion,
    gaussian_filter,
    map_coordinates,
)

CROSS_3X3 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
SQUARE_3X3 = np.ones((3, 3), dtype=bool)

MIN_SKETCH_PIXELS = 8
MAX_RETRIES = 5


class EmptyMask(ValueError):
    """Mask has no foreground, so no edge can be extracted."""


class DegenerateSketch(RuntimeError):
    """Deformation collapsed the sketch below the usable pixel count."""


@dataclass(frozen=True)
class DeformationParams:
    sigma0: float = 4.0         # displacement noise std, pixels
    sigma_smooth: float = 6.0   # Gaussian smoothing std for the field
    morph_kernel: int = 3
    erosion_probability: float = 0.5

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        if self.sigma_smooth <= 0:
            raise ValueError("sigma_smooth must be > 0")
        if self.morph_kernel != 3:
            raise ValueError("morph_kernel is fixed at 3")
        if not 0.0 <= self.erosion_probability <= 1.0:
            raise ValueError("erosion_probability must lie in [0,1]")


def _as_binary(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("expected a binary {0,1} array")
    return arr.astype(np.uint8)


def extract_edges(mask: np.ndarray) -> np.ndarray:
    """One-pixel boundary of a binary mask: mask XOR erode(mask, 3x3 cross).

    On binary input this coincides with Canny output up to thinning, without
    Canny's free threshold parameters.
    """
    mask = _as_binary(mask)
    if mask.sum() == 0:
        raise EmptyMask("cannot extract edges from an all-zero mask")
    eroded = binary_erosion(mask.astype(bool), structure=CROSS_3X3, border_value=0)
    return (mask.astype(bool) ^ eroded).astype(np.uint8)


def perturb_edges(edge: np.ndarray, params: DeformationParams, rng: np.random.Generator) -> np.ndarray:
    """Randomly erode or dilate the edge map once with a 3x3 kernel."""
    edge = _as_binary(edge).astype(bool)
    if rng.uniform() < params.erosion_probability:
        out = binary_erosion(edge, structure=SQUARE_3X3, border_value=0)
    else:
        out = binary_dilation(edge, structure=SQUARE_3X3, border_value=0)
    return out.astype(np.uint8)


def elastic_deform(img: np.ndarray, params: DeformationParams, rng: np.random.Generator) -> np.ndarray:
    """Elastic deformation: smoothed i.i.d. Gaussian displacement + bilinear resample.

    Out-of-bounds samples read as background; output is re-binarized at 0.5.
    """
    img = _as_binary(img)
    if params.sigma0 == 0.0:
        return img.copy()
    shape = img.shape
    dy = gaussian_filter(rng.normal(0.0, params.sigma0, size=shape), params.sigma_smooth)
    dx = gaussian_filter(rng.normal(0.0, params.sigma0, size=shape), params.sigma_smooth)
    yy, xx = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    coords = np.stack([yy + dy, xx + dx])
    warped = map_coordinates(img.astype(np.float64), coords, order=1, mode="constant", cval=0.0)
    return (warped > 0.5).astype(np.uint8)


def synthesize_training_pair(
    mask: np.ndarray, params: DeformationParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(S*, E) pair for refiner training; retries degenerate deformations."""
    edge = extract_edges(mask)
    for _ in range(MAX_RETRIES):
        sketch = elastic_deform(perturb_edges(edge, params, rng), params, rng)
        if sketch.sum() >= MIN_SKETCH_PIXELS:
            return sketch, edge
    raise DegenerateSketch(
        f"sketch stayed below {MIN_SKETCH_PIXELS} pixels after {MAX_RETRIES} draws"
    )
