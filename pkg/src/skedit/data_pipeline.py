"""Slice dataset ingestion, intensity normalization, phantom synthesis, splits.

Records live on disk as one directory per volume: 16-bit grayscale PNGs
(slice_0000.png, ...), a meta.json sidecar with id/spacing/modality, and
optional binary masks under masks/ as 8-bit {0,255} PNGs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

CT_HU_MIN = -1000.0
CT_HU_MAX = 1000.0
MRI_PERCENTILE = 99.5


class Modality(str, Enum):
    MRI = "MRI"
    CT = "CT"


class NonFiniteInput(ValueError):
    """Raised when a raw slice contains NaN or infinite values."""


@dataclass(frozen=True)
class VolumeRecord:
    """A stack of normalized 2D slices plus acquisition metadata."""

    id: str
    slices: list[np.ndarray]
    spacing: tuple[float, float, float]
    modality: Modality
    tumor_masks: list[np.ndarray] | None = None

    def __post_init__(self):
        if not self.slices:
            raise ValueError(f"record {self.id!r} has no slices")
        for s in self.slices:
            if s.ndim != 2:
                raise ValueError("slices must be 2D")
            if not np.isfinite(s).all():
                raise NonFiniteInput(f"record {self.id!r} has non-finite slice values")
            if s.min() < 0.0 or s.max() > 1.0:
                raise ValueError(f"record {self.id!r} slice values outside [0,1]")
        if any(c <= 0 for c in self.spacing):
            raise ValueError(f"record {self.id!r} spacing must be strictly positive")
        if self.tumor_masks is not None:
            if len(self.tumor_masks) != len(self.slices):
                raise ValueError("tumor_masks must align with slices")
            for m, s in zip(self.tumor_masks, self.slices):
                if m.shape != s.shape:
                    raise ValueError("mask shape must match slice shape")
                if not np.isin(m, (0, 1)).all():
                    raise ValueError("masks must be binary")


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]  # (row, col)
    axes: tuple[float, float]    # semi-axes (row, col), pixels
    intensity: float

    def rasterize(self, shape: tuple[int, int]) -> np.ndarray:
        yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
        ay, ax = self.axes
        return (((yy - self.center[0]) / ay) ** 2 + ((xx - self.center[1]) / ax) ** 2 <= 1.0).astype(np.uint8)


@dataclass(frozen=True)
class PhantomSpec:
    """Synthetic single-slice phantom: textured background, organ, tumor."""

    image_size: int = 128
    organ_ellipse: Ellipse = field(
        default_factory=lambda: Ellipse((64.0, 64.0), (40.0, 48.0), 0.45)
    )
    tumor_ellipse: Ellipse = field(
        default_factory=lambda: Ellipse((60.0, 70.0), (12.0, 10.0), 0.35)
    )
    background_texture_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        ay, ax = self.tumor_ellipse.axes
        cy, cx = self.tumor_ellipse.center
        if ay <= 0 or ax <= 0:
            raise ValueError("tumor ellipse axes must be positive")
        n = self.image_size
        if cy - ay < 0 or cy + ay >= n or cx - ax < 0 or cx + ax >= n:
            raise ValueError("tumor ellipse exceeds image bounds")


def normalize_intensities(raw: np.ndarray, modality: Modality) -> np.ndarray:
    """Clip and affinely rescale a raw slice to [0,1].

    MRI clips to the per-slice [p0, p99.5] percentile window; CT clips to
    [-1000, 1000] HU. A degenerate (constant) window maps to all zeros.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise NonFiniteInput("raw slice contains non-finite values")
    if modality == Modality.CT:
        lo, hi = CT_HU_MIN, CT_HU_MAX
    else:
        lo = float(np.percentile(raw, 0.0))
        hi = float(np.percentile(raw, MRI_PERCENTILE))
    if hi <= lo:
        return np.zeros_like(raw)
    return (np.clip(raw, lo, hi) - lo) / (hi - lo)


def split_dataset(records: list[VolumeRecord], seed: int) -> tuple[list[VolumeRecord], list[VolumeRecord]]:
    """Deterministic 80/20 split; stable under input reordering (keyed by id)."""
    if len(records) < 5:
        raise ValueError(f"need at least 5 records for an 8:2 split, got {len(records)}")
    ordered = sorted(records, key=lambda r: r.id)
    rng = random.Random(seed)
    rng.shuffle(ordered)
    n_train = round(0.8 * len(ordered))
    return ordered[:n_train], ordered[n_train:]


def generate_phantom(spec: PhantomSpec) -> VolumeRecord:
    """Render one phantom slice with an exact tumor mask.

    Background is Gaussian-blurred uniform noise; organ and tumor are
    ellipses, the tumor offset in intensity from the organ.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.image_size
    noise = rng.uniform(0.0, 1.0, size=(n, n))
    background = gaussian_filter(noise, sigma=spec.background_texture_scale)
    # blur shrinks the dynamic range; restretch to a fixed band so texture survives
    background = 0.05 + 0.20 * (background - background.min()) / max(np.ptp(background), 1e-9)

    organ = spec.organ_ellipse.rasterize((n, n)).astype(bool)
    tumor = spec.tumor_ellipse.rasterize((n, n)).astype(bool)

    img = background.copy()
    img[organ] = spec.organ_ellipse.intensity + 0.05 * (background[organ] - background[organ].mean())
    img[tumor] = (
        spec.organ_ellipse.intensity
        + spec.tumor_ellipse.intensity
        + 0.05 * (background[tumor] - background[tumor].mean())
    )
    img = np.clip(img, 0.0, 1.0)

    spacing = tuple(float(x) for x in rng.uniform(0.5, 2.0, size=3))
    return VolumeRecord(
        id=f"phantom_{spec.seed:05d}",
        slices=[img],
        spacing=spacing,
        modality=Modality.MRI,
        tumor_masks=[tumor.astype(np.uint8)],
    )


def random_phantom_spec(image_size: int, seed: int) -> PhantomSpec:
    """Randomized ellipse geometry for dataset synthesis; deterministic in seed."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    n = image_size
    organ_axes = (rng.uniform(0.25, 0.35) * n, rng.uniform(0.3, 0.4) * n)
    organ_center = (n / 2 + rng.uniform(-0.03, 0.03) * n, n / 2 + rng.uniform(-0.03, 0.03) * n)
    tumor_axes = (rng.uniform(0.06, 0.14) * n, rng.uniform(0.06, 0.14) * n)
    # keep the tumor inside the organ so edits have organ context
    ang = rng.uniform(0, 2 * np.pi)
    r = rng.uniform(0.0, 0.4)
    tumor_center = (
        organ_center[0] + r * organ_axes[0] * np.sin(ang),
        organ_center[1] + r * organ_axes[1] * np.cos(ang),
    )
    return PhantomSpec(
        image_size=image_size,
        organ_ellipse=Ellipse(organ_center, organ_axes, rng.uniform(0.40, 0.50)),
        tumor_ellipse=Ellipse(tumor_center, tumor_axes, rng.uniform(0.30, 0.40)),
        background_texture_scale=3.0,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# On-disk record format


def _write_png16(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def _read_png16(path: Path) -> np.ndarray:
    arr = np.array(Image.open(path)).astype(np.float64)
    return arr / 65535.0


def save_record(record: VolumeRecord, root: Path) -> Path:
    out = Path(root) / record.id
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(record.slices):
        _write_png16(out / f"slice_{i:04d}.png", s)
    if record.tumor_masks is not None:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        for i, m in enumerate(record.tumor_masks):
            Image.fromarray((m * 255).astype(np.uint8), mode="L").save(mask_dir / f"mask_{i:04d}.png")
    meta = {"id": record.id, "spacing": list(record.spacing), "modality": record.modality.value}
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    return out


def load_record(record_dir: Path) -> VolumeRecord:
    record_dir = Path(record_dir)
    meta = json.loads((record_dir / "meta.json").read_text())
    slices = [_read_png16(p) for p in sorted(record_dir.glob("slice_*.png"))]
    masks = None
    mask_dir = record_dir / "masks"
    if mask_dir.is_dir():
        masks = [
            (np.array(Image.open(p)) >= 128).astype(np.uint8)
            for p in sorted(mask_dir.glob("mask_*.png"))
        ]
    return VolumeRecord(
        id=meta["id"],
        slices=slices,
        spacing=tuple(meta["spacing"]),
        modality=Modality(meta["modality"]),
        tumor_masks=masks,
    )


def load_dataset(root: Path) -> list[VolumeRecord]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file())
    return [load_record(p) for p in dirs]
