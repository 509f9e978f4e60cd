"""Interior mask and reference map construction from a binary sketch."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_closing, binary_erosion, binary_fill_holes, label

SQUARE_3X3 = np.ones((3, 3), dtype=bool)

MIN_INTERIOR_AREA = 4
MAX_CLOSING_ITERATIONS = 3


class OpenContour(ValueError):
    """Sketch does not enclose a usable region."""


def _as_binary(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("expected a binary {0,1} array")
    return arr.astype(np.uint8)


def close_boundaries(sketch: np.ndarray, kernel: int = 3, iterations: int = 1) -> np.ndarray:
    """Morphological closing to bridge small gaps in the contour."""
    sketch = _as_binary(sketch)
    if sketch.sum() == 0:
        return sketch.copy()
    structure = np.ones((kernel, kernel), dtype=bool)
    out = sketch.astype(bool)
    for _ in range(iterations):
        out = binary_closing(out, structure=structure)
    return out.astype(np.uint8)


def _fill_from_outside(sketch: np.ndarray) -> np.ndarray:
    """Flood the background from a padded frame (4-connectivity), invert.

    Padding guarantees the seed is outside the target region even when
    strokes touch the image border. Interior includes the stroke pixels.
    """
    padded = np.pad(sketch, 1, constant_values=0)
    background = padded == 0
    labels, _ = label(background, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    outside = labels == labels[0, 0]
    interior = ~outside
    return interior[1:-1, 1:-1].astype(np.uint8)


def interior_mask(sketch: np.ndarray) -> np.ndarray:
    """Region enclosed by the sketch, stroke pixels included.

    If flood fill finds no meaningful interior, the contour is closed with
    1..3 rounds of morphological closing before giving up.
    """
    sketch = _as_binary(sketch)
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    candidate = sketch
    for closing_rounds in range(MAX_CLOSING_ITERATIONS + 1):
        if closing_rounds > 0:
            candidate = close_boundaries(sketch, iterations=closing_rounds)
        interior = _fill_from_outside(candidate)
        # a 1-D stroke "interior" vanishes under erosion; a real 2-D region survives
        has_body = binary_erosion(interior.astype(bool), structure=cross, border_value=0).sum() > 0
        if has_body and interior.sum() >= MIN_INTERIOR_AREA:
            return interior
    raise OpenContour("sketch does not enclose a region")


def reference_map(image: np.ndarray, interior: np.ndarray, literal_product: bool = False) -> np.ndarray:
    """Background-preserving context map: (1 - interior) * image.

    The literal interior*image form is kept behind a flag for A/B
    comparison; the complement is the default because the map exists to
    carry the unaffected background into the diffusion conditioning.
    """
    image = np.asarray(image, dtype=np.float64)
    interior = _as_binary(interior)
    if image.shape != interior.shape:
        raise ValueError(f"shape mismatch: image {image.shape} vs interior {interior.shape}")
    if literal_product:
        return interior * image
    return (1 - interior) * image


def fill_mask(mask: np.ndarray) -> np.ndarray:
    """Hole-filled version of a binary mask (used by flood-fill oracles)."""
    return binary_fill_holes(_as_binary(mask).astype(bool)).astype(np.uint8)
