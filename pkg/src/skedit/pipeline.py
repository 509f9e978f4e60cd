"""Stage wiring shared by the CLI, the evaluation suite, and scripts."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_dilation

from .conditioned_ldm import (
    ConditionInputs,
    EditModels,
    edit_image,
    edit_prepared,
)
from .data_pipeline import VolumeRecord
from .mask_ops import OpenContour, interior_mask, reference_map
from .metrics import EvalReport, dice, nrmse, psnr, segment_by_threshold, ssim
from .sketch_refiner import RefinerUNet, refine
from .sketch_synthesis import (
    DeformationParams,
    DegenerateSketch,
    extract_edges,
    synthesize_training_pair,
)
from .vae_gan import VAE, encode_image


def iter_masked_slices(records: list[VolumeRecord]):
    for rec in records:
        if rec.tumor_masks is None:
            continue
        for k, (img, mask) in enumerate(zip(rec.slices, rec.tumor_masks)):
            if mask.sum() == 0:
                continue
            yield rec, k, img, mask


def build_sketch_pairs(
    records: list[VolumeRecord], params: DeformationParams, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(S*, E) pairs for refiner training from every masked slice."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _, _, _, mask in iter_masked_slices(records):
        try:
            pairs.append(synthesize_training_pair(mask, params, rng))
        except DegenerateSketch:
            continue
    return pairs


def prepare_ldm_data(
    records: list[VolumeRecord],
    refiner: RefinerUNet,
    vae: VAE,
    params: DeformationParams,
    seed: int,
    include_accurate: bool = True,
):
    """Latents + conditioning rasters for diffusion training.

    Each masked slice contributes a refined-sketch example and, optionally,
    an accurate-edge example (matching the '+' inference setting).
    """
    rng = np.random.default_rng(seed)
    latents: list[np.ndarray] = []
    conditions: list[ConditionInputs] = []
    for rec, _, img, mask in iter_masked_slices(records):
        edge = extract_edges(mask)
        try:
            sketch, _ = synthesize_training_pair(mask, params, rng)
        except DegenerateSketch:
            sketch = edge
        soft, hard = refine(refiner, sketch)
        try:
            interior = interior_mask(hard)
        except OpenContour:
            interior = interior_mask(edge)
        latent = encode_image(vae, img, sample=False)
        conditions.append(
            ConditionInputs(sketch=soft, ref_map=reference_map(img, interior), spacing=rec.spacing)
        )
        latents.append(latent)
        if include_accurate:
            interior_e = interior_mask(edge)
            conditions.append(
                ConditionInputs(
                    sketch=edge.astype(np.float64),
                    ref_map=reference_map(img, interior_e),
                    spacing=rec.spacing,
                )
            )
            latents.append(latent)
    return latents, conditions


def vae_heldout_psnr(records: list[VolumeRecord], vae: VAE) -> float:
    """Mean deterministic-reconstruction PSNR over all slices of the records."""
    from .vae_gan import decode_latent

    scores = []
    for rec in records:
        for img in rec.slices:
            recon = decode_latent(vae, encode_image(vae, img, sample=False))
            scores.append(psnr(img, recon))
    if not scores:
        raise ValueError("no slices to score")
    return float(np.mean(scores))


def enlarged_sketch_edit(
    img: np.ndarray,
    mask: np.ndarray,
    spacing: tuple[float, float, float],
    models: EditModels,
    grow: int = 6,
    seed: int = 0,
    sampler_steps: int | None = None,
):
    """Progression-style edit: the sketch traces the tumor dilated by `grow` px.

    Returns (result, scores) where scores holds the overlap between the
    thresholded edit and the sketch interior plus the fraction of squared
    difference-map energy falling inside the interior dilated by 5 px.
    """
    big = binary_dilation(mask.astype(bool), iterations=grow).astype(np.uint8)
    edge = extract_edges(big)
    result = edit_prepared(
        img, edge.astype(np.float64), edge, spacing, models, seed=seed, sampler_steps=sampler_steps
    )
    roi = binary_dilation(result.interior.astype(bool), iterations=5)
    seg = segment_by_threshold(result.edited, roi)
    energy = result.difference**2
    scores = {
        "dice": dice(result.interior, seg),
        "energy_fraction": float(energy[roi].sum() / max(energy.sum(), 1e-12)),
    }
    return result, scores


def _score_edit(img, mask, result) -> dict:
    roi = binary_dilation(result.interior.astype(bool), iterations=5)
    seg = segment_by_threshold(result.edited, roi)
    return {
        "nrmse": nrmse(img, result.edited),
        "ssim": ssim(img, result.edited),
        "psnr": psnr(img, result.edited),
        "dice_gt_mask": dice(mask, seg),
        "dice_sketch_interior": dice(result.interior, seg),
    }


def reconstruction_eval(
    records: list[VolumeRecord],
    models: EditModels,
    condition: str,
    params: DeformationParams,
    seed: int,
    dataset_id: str = "phantoms",
    limit: int | None = None,
) -> EvalReport:
    """Reconstruction-mode scoring: sketches trace the existing tumor,
    the edited image is compared against the unchanged source.

    condition: accurate-edge | refined-sketch | unrefined.
    """
    rng = np.random.default_rng(seed)
    report = EvalReport(dataset_id=dataset_id, condition=condition)
    count = 0
    for rec, _, img, mask in iter_masked_slices(records):
        if limit is not None and count >= limit:
            break
        edge = extract_edges(mask)
        item_seed = int(rng.integers(0, 2**31))
        try:
            if condition == "accurate-edge":
                result = edit_prepared(
                    img, edge.astype(np.float64), edge, rec.spacing, models, seed=item_seed
                )
            elif condition == "refined-sketch":
                sketch, _ = synthesize_training_pair(mask, params, rng)
                result = edit_image(img, sketch, rec.spacing, models, seed=item_seed)
            elif condition == "unrefined":
                sketch, _ = synthesize_training_pair(mask, params, rng)
                result = edit_prepared(
                    img, sketch.astype(np.float64), sketch, rec.spacing, models, seed=item_seed
                )
            else:
                raise ValueError(f"unknown condition {condition!r}")
        except (OpenContour, DegenerateSketch):
            continue
        report.add(**_score_edit(img, mask, result))
        count += 1
    return report
