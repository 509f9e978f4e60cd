"""PNG wire-format helpers: 16-bit intensities, 8-bit masks/sketches."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def encode_png16(img: np.ndarray) -> bytes:
    """Normalized [0,1] image -> 16-bit grayscale PNG bytes."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png16(data: bytes) -> np.ndarray:
    arr = np.array(Image.open(io.BytesIO(data))).astype(np.float64)
    return arr / 65535.0


def encode_png8(img: np.ndarray) -> bytes:
    """[0,1] image (or {0,1} mask) -> 8-bit grayscale PNG bytes."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_png8(data: bytes) -> np.ndarray:
    """8-bit grayscale PNG -> [0,1] float image."""
    arr = np.array(Image.open(io.BytesIO(data)).convert("L")).astype(np.float64)
    return arr / 255.0


def to_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def from_b64(text: str) -> bytes:
    return base64.b64decode(text)
