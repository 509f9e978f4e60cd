"""HTTP inference service: slice retrieval, refine preview, edit execution.

Stateless across requests apart from the immutable loaded models and the
read-only dataset; every request owns its own sampler seed.
"""

from __future__ import annotations

import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import __version__
from .conditioned_ldm import EditModels, edit_image, load_ldm
from .data_pipeline import load_dataset
from .mask_ops import OpenContour
from .metrics import nrmse, psnr, ssim
from .pngio import decode_png8, decode_png16, encode_png8, encode_png16, from_b64, to_b64
from .sketch_refiner import load_refiner, refine
from .vae_gan import load_vae


class RefineRequest(BaseModel):
    volume_id: str
    slice_index: int
    sketch: str  # base64 8-bit PNG, 0 background / 255 stroke


class EditRequest(BaseModel):
    volume_id: str
    slice_index: int
    sketch: str
    spacing: tuple[float, float, float] | None = None
    seed: int | None = None
    sampler_steps: int | None = None
    base_image: str | None = None  # base64 16-bit PNG; overrides the stored slice for chained edits


def create_app(
    data_root: Path,
    refiner_path: Path | None = None,
    vae_path: Path | None = None,
    ldm_path: Path | None = None,
    save_dir: Path | None = None,
) -> FastAPI:
    app = FastAPI(title="skedit edit service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    records = {r.id: r for r in load_dataset(data_root)} if Path(data_root).is_dir() else {}
    refiner = vae = denoiser = None
    if refiner_path and Path(refiner_path).is_file():
        refiner, _ = load_refiner(refiner_path)
    if vae_path and Path(vae_path).is_file():
        vae, _ = load_vae(vae_path)
    if ldm_path and Path(ldm_path).is_file():
        denoiser = load_ldm(ldm_path)
    versions = {"skedit": __version__, "checkpoint_schema": 1}
    models = EditModels(refiner=refiner, vae=vae, denoiser=denoiser, versions=versions)

    def _loaded() -> bool:
        return refiner is not None and vae is not None and denoiser is not None

    def _get_slice(volume_id: str, index: int) -> np.ndarray:
        rec = records.get(volume_id)
        if rec is None:
            raise HTTPException(404, f"unknown volume {volume_id!r}")
        if not 0 <= index < len(rec.slices):
            raise HTTPException(404, f"slice {index} out of range for {volume_id!r}")
        return rec.slices[index]

    @app.get("/api/health")
    def health():
        if not _loaded():
            missing = [
                name
                for name, m in (("refiner", refiner), ("vae", vae), ("ldm", denoiser))
                if m is None
            ]
            raise HTTPException(503, detail={"status": "unavailable", "missing": missing})
        return {"status": "ok", "model_versions": versions}

    @app.get("/api/volumes")
    def volumes():
        return [
            {
                "id": r.id,
                "slices": len(r.slices),
                "spacing": list(r.spacing),
                "modality": r.modality.value,
            }
            for r in records.values()
        ]

    @app.get("/api/volumes/{volume_id}/slices/{index}")
    def get_slice(volume_id: str, index: int):
        img = _get_slice(volume_id, index)
        return Response(content=encode_png16(img), media_type="image/png")

    @app.post("/api/refine")
    def refine_sketch(req: RefineRequest):
        if refiner is None:
            raise HTTPException(503, "refiner not loaded")
        slice_img = _get_slice(req.volume_id, req.slice_index)
        sketch = (decode_png8(from_b64(req.sketch)) > 0.5).astype(np.uint8)
        if sketch.shape != slice_img.shape:
            raise HTTPException(
                400, f"sketch shape {sketch.shape} does not match slice {slice_img.shape}"
            )
        soft, hard = refine(refiner, sketch)
        return {
            "soft": to_b64(encode_png8(soft)),
            "binary": to_b64(encode_png8(hard.astype(np.float64))),
            "model_versions": versions,
        }

    @app.post("/api/edit")
    def edit(req: EditRequest):
        if not _loaded():
            raise HTTPException(503, "models not loaded")
        rec = records.get(req.volume_id)
        if rec is None:
            raise HTTPException(404, f"unknown volume {req.volume_id!r}")
        source = _get_slice(req.volume_id, req.slice_index)
        if req.base_image is not None:
            source = decode_png16(from_b64(req.base_image))
            if source.shape != rec.slices[req.slice_index].shape:
                raise HTTPException(400, "base_image shape does not match the volume slices")
        sketch = (decode_png8(from_b64(req.sketch)) > 0.5).astype(np.uint8)
        if sketch.shape != source.shape:
            raise HTTPException(
                400, f"sketch shape {sketch.shape} does not match slice {source.shape}"
            )
        spacing = tuple(req.spacing) if req.spacing else rec.spacing
        seed = req.seed if req.seed is not None else 0
        try:
            result = edit_image(
                source, sketch, spacing, models, seed=seed, sampler_steps=req.sampler_steps
            )
        except OpenContour as exc:
            raise HTTPException(422, detail={"error": "OpenContour", "message": str(exc)})
        except HTTPException:
            raise
        except Exception as exc:  # incident path: opaque id, detail stays server-side
            incident = uuid.uuid4().hex[:12]
            raise HTTPException(500, detail={"incident_id": incident, "error": type(exc).__name__})

        diff = result.difference
        diff_scale = float(diff.max()) or 1.0
        payload = {
            "edited": to_b64(encode_png16(result.edited)),
            "interior_mask": to_b64(encode_png8(result.interior.astype(np.float64))),
            "reference_map": to_b64(encode_png16(result.reference)),
            "difference_map": to_b64(encode_png8(diff / diff_scale)),
            "difference_scale": diff_scale,
            "metrics": {
                "nrmse": nrmse(source, result.edited),
                "ssim": ssim(source, result.edited),
                "psnr": psnr(source, result.edited),
            },
            "seed": seed,
            "model_versions": versions,
        }
        if save_dir is not None:
            out = Path(save_dir)
            out.mkdir(parents=True, exist_ok=True)
            stem = f"{req.volume_id}_{req.slice_index}_{seed}"
            (out / f"{stem}_edited.png").write_bytes(from_b64(payload["edited"]))
        return payload

    return app
