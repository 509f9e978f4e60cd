#!/usr/bin/env python3
"""Desk-scale experiment runner: phantoms -> refiner -> VAE -> diffusion -> report.

Runs every stage through the CLI so each artifact directory carries a
manifest, then scores the trained models on the held-out split. Stages with
an existing checkpoint are skipped unless --force, so interrupted runs
resume where they left off.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from skedit.cli import run
from skedit.conditioned_ldm import EditModels, load_ldm
from skedit.data_pipeline import load_dataset, split_dataset
from skedit.pipeline import (
    enlarged_sketch_edit,
    iter_masked_slices,
    reconstruction_eval,
    vae_heldout_psnr,
)
from skedit.sketch_refiner import load_refiner
from skedit.sketch_synthesis import DeformationParams
from skedit.vae_gan import load_vae


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--workdir", type=Path, required=True)
    p.add_argument("--n-phantoms", type=int, default=40)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refiner-steps", type=int, default=500)
    p.add_argument("--refiner-batch", type=int, default=4)
    p.add_argument("--vae-steps", type=int, default=4000)
    p.add_argument("--vae-batch", type=int, default=8)
    p.add_argument("--ldm-steps", type=int, default=6000)
    p.add_argument("--ldm-batch", type=int, default=8)
    p.add_argument("--ldm-lr", type=float, default=2e-4)
    p.add_argument("--ldm-base-channels", type=int, default=64)
    p.add_argument("--sampler-steps", type=int, default=50)
    p.add_argument("--grow", type=int, default=10, help="tumor dilation for the progression edit")
    p.add_argument("--eval-limit", type=int, default=4, help="test slices per eval condition")
    p.add_argument("--force", action="store_true", help="retrain even if checkpoints exist")
    return p.parse_args()


def stage(name: str, marker: Path, force: bool, argv: list[str]) -> None:
    if marker.exists() and not force:
        print(f"[{name}] cached ({marker})")
        return
    t0 = time.time()
    code = run(argv)
    if code != 0:
        raise SystemExit(f"stage {name} failed with exit code {code}")
    print(f"[{name}] done in {time.time() - t0:.1f}s")


def main():
    args = parse_args()
    w = args.workdir
    w.mkdir(parents=True, exist_ok=True)
    s = str(args.seed)

    stage(
        "synth-data",
        w / "data" / "manifest.json",
        args.force,
        ["synth-data", "--out", str(w / "data"), "--n", str(args.n_phantoms),
         "--size", str(args.size), "--seed", s],
    )
    stage(
        "synth-sketches",
        w / "pairs" / "manifest.json",
        args.force,
        ["synth-sketches", "--data-root", str(w / "data"), "--out", str(w / "pairs"), "--seed", s],
    )
    stage(
        "train-refiner",
        w / "refiner" / "refiner.pt",
        args.force,
        ["train-refiner", "--pairs", str(w / "pairs"), "--out", str(w / "refiner"),
         "--steps", str(args.refiner_steps), "--batch-size", str(args.refiner_batch), "--seed", s],
    )
    stage(
        "train-vae",
        w / "vae" / "vae.pt",
        args.force,
        ["train-vae", "--data-root", str(w / "data"), "--out", str(w / "vae"),
         "--steps", str(args.vae_steps), "--batch-size", str(args.vae_batch), "--seed", s],
    )
    stage(
        "train-ldm",
        w / "ldm" / "ldm.pt",
        args.force,
        ["train-ldm", "--data-root", str(w / "data"), "--refiner", str(w / "refiner"),
         "--vae", str(w / "vae"), "--out", str(w / "ldm"),
         "--steps", str(args.ldm_steps), "--batch-size", str(args.ldm_batch),
         "--lr", str(args.ldm_lr), "--base-channels", str(args.ldm_base_channels),
         "--seed", s],
    )

    # ---- evaluation on the held-out split ---------------------------------
    records = load_dataset(w / "data")
    train, test = split_dataset(records, args.seed)
    refiner, _ = load_refiner(w / "refiner" / "refiner.pt")
    vae, _ = load_vae(w / "vae" / "vae.pt")
    denoiser = load_ldm(w / "ldm" / "ldm.pt")
    models = EditModels(refiner=refiner, vae=vae, denoiser=denoiser)

    report = {}

    history = json.loads((w / "refiner" / "loss_history.json").read_text())
    k = max(1, len(history) // 20)
    first, last = float(np.mean(history[:k])), float(np.mean(history[-k:]))
    report["refiner_loss_first"] = first
    report["refiner_loss_last"] = last
    report["refiner_improvement"] = (first - last) / max(abs(first), 1e-12)

    report["vae_heldout_psnr"] = vae_heldout_psnr(test, vae)

    recon = reconstruction_eval(
        test, models, "accurate-edge", DeformationParams(), args.seed, limit=args.eval_limit
    )
    report["recon"] = recon.aggregate

    growth = []
    for rec, _, img, mask in iter_masked_slices(test):
        if len(growth) >= args.eval_limit:
            break
        _, scores = enlarged_sketch_edit(
            img, mask, rec.spacing, models, grow=args.grow, seed=args.seed,
            sampler_steps=args.sampler_steps,
        )
        growth.append(scores)
    report["enlarged"] = {
        k: float(np.mean([g[k] for g in growth])) for k in growth[0]
    } if growth else {}

    print(json.dumps(report, indent=2))
    (w / "desk_report.json").write_text(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
