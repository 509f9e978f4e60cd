"""Image fidelity and overlap metrics plus the evaluation report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class DegenerateRange(ValueError):
    """Ground truth has zero dynamic range; NRMSE is undefined."""


def _check_shapes(gt: np.ndarray, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    return gt, pred


def nrmse(gt: np.ndarray, pred: np.ndarray) -> float:
    """RMSE normalized by the ground-truth dynamic range."""
    gt, pred = _check_shapes(gt, pred)
    rng = gt.max() - gt.min()
    if rng == 0:
        raise DegenerateRange("constant ground truth")
    return float(np.sqrt(np.mean((gt - pred) ** 2)) / rng)


def psnr(gt: np.ndarray, pred: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for data range 1.0, capped at 100."""
    gt, pred = _check_shapes(gt, pred)
    mse = float(np.mean((gt - pred) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def ssim(gt: np.ndarray, pred: np.ndarray) -> float:
    """Mean local SSIM, 7x7 uniform window, K1=0.01, K2=0.03, data range 1.0."""
    gt, pred = _check_shapes(gt, pred)
    if min(gt.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    # crop to full windows so every statistic uses exactly 49 samples
    half = SSIM_WINDOW // 2
    win = dict(size=SSIM_WINDOW, mode="constant")
    mu_x = uniform_filter(gt, **win)
    mu_y = uniform_filter(pred, **win)
    # unbiased-free (population) second moments over the window
    xx = uniform_filter(gt * gt, **win) - mu_x * mu_x
    yy = uniform_filter(pred * pred, **win) - mu_y * mu_y
    xy = uniform_filter(gt * pred, **win) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    interior = ssim_map[half:-half, half:-half]
    return float(interior.mean())


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap 2|a∩b|/(|a|+|b|); two empty masks agree vacuously (1.0)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not np.isin(a, (0, 1)).all() or not np.isin(b, (0, 1)).all():
        raise ValueError("dice expects binary masks")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


@dataclass
class EvalReport:
    dataset_id: str
    condition: str  # accurate-edge | refined-sketch | unrefined
    per_image: list[dict] = field(default_factory=list)

    def add(self, **values: float) -> None:
        self.per_image.append(values)

    @property
    def aggregate(self) -> dict:
        if not self.per_image:
            return {}
        keys = self.per_image[0].keys()
        return {k: float(np.mean([row[k] for row in self.per_image])) for k in keys}

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "condition": self.condition,
            "per_image": self.per_image,
            "aggregate": self.aggregate,
        }

    def format_table(self) -> str:
        agg = self.aggregate
        header = f"dataset={self.dataset_id} condition={self.condition} n={len(self.per_image)}"
        cols = "\t".join(agg.keys())
        vals = "\t".join(f"{v:.4f}" for v in agg.values())
        return "\n".join([header, cols, vals])


def otsu_threshold(values: np.ndarray) -> float:
    """Classic Otsu split on a flat array; used by the phantom segmentation oracle."""
    hist, edges = np.histogram(values.ravel(), bins=128)
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = hist.sum()
    best_t, best_var = centers[0], -1.0
    w0 = np.cumsum(hist)
    w1 = total - w0
    sum0 = np.cumsum(hist * centers)
    mean_total = sum0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (mean_total - sum0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    idx = int(np.argmax(between))
    if between[idx] > best_var:
        best_t = centers[idx]
    return float(best_t)


def segment_by_threshold(image: np.ndarray, roi: np.ndarray) -> np.ndarray:
    """Otsu-threshold segmentation restricted to a region of interest.

    Desk-scale stand-in for a learned segmenter when scoring edited phantoms.
    """
    roi = roi.astype(bool)
    if roi.sum() == 0:
        return np.zeros_like(image, dtype=np.uint8)
    t = otsu_threshold(image[roi])
    seg = np.zeros_like(image, dtype=np.uint8)
    seg[roi] = (image[roi] > t).astype(np.uint8)
    return seg


def evaluate_suite(pairs, dataset_id: str, condition: str) -> EvalReport:
    """Score (gt, edited, gt_mask, pred_mask) tuples into a report."""
    report = EvalReport(dataset_id=dataset_id, condition=condition)
    for gt, edited, gt_mask, pred_mask in pairs:
        report.add(
            nrmse=nrmse(gt, edited),
            ssim=ssim(gt, edited),
            psnr=psnr(gt, edited),
            dice=dice(gt_mask, pred_mask),
        )
    return report
