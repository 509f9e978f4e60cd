#!/usr/bin/env python3
"""Edit-locality sweep over sketch growth and sampler settings.

Given a trained workdir (see run_desk_pipeline.py), edits held-out slices
with the tumor contour dilated by each --grow value and reports how well
the synthesized lesion fills the sketch (dice) and how much of the change
stays near it (energy fraction inside interior+5px). Useful for picking
the growth range where edits remain local.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from skedit.conditioned_ldm import EditModels, load_ldm
from skedit.data_pipeline import load_dataset, split_dataset
from skedit.pipeline import enlarged_sketch_edit, iter_masked_slices
from skedit.sketch_refiner import load_refiner
from skedit.vae_gan import load_vae


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--workdir", type=Path, required=True)
    p.add_argument("--grow", type=int, nargs="+", default=[2, 4, 6, 8])
    p.add_argument("--sampler-steps", type=int, default=50)
    p.add_argument("--limit", type=int, default=4, help="test slices per grow value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="optional JSON report path")
    return p.parse_args()


def main():
    args = parse_args()
    w = args.workdir
    records = load_dataset(w / "data")
    _, test = split_dataset(records, args.seed)
    refiner, _ = load_refiner(w / "refiner" / "refiner.pt")
    vae, _ = load_vae(w / "vae" / "vae.pt")
    models = EditModels(refiner=refiner, vae=vae, denoiser=load_ldm(w / "ldm" / "ldm.pt"))

    report = {}
    for grow in args.grow:
        scores = []
        for rec, _, img, mask in iter_masked_slices(test):
            if len(scores) >= args.limit:
                break
            _, s = enlarged_sketch_edit(
                img, mask, rec.spacing, models,
                grow=grow, seed=args.seed, sampler_steps=args.sampler_steps,
            )
            scores.append(s)
        report[f"grow_{grow}"] = {
            key: float(np.mean([s[key] for s in scores])) for key in scores[0]
        }
        print(f"grow={grow}: " + "  ".join(f"{k}={v:.4f}" for k, v in report[f"grow_{grow}"].items()))

    if args.out:
        args.out.write_text(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
