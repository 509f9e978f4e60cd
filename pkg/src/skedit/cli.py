"""skedit command line: data synthesis, three training stages, edit, eval, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure. All randomness
flows from --seed. A JSON config file may preset any flag; explicit flags
win. Every artifact directory gets a manifest with config hash, seed, and
schema version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .conditioned_ldm import EditModels, LDMConfig, edit_image, load_ldm, save_ldm, train_ldm
from .data_pipeline import (
    Modality,
    generate_phantom,
    load_dataset,
    random_phantom_spec,
    save_record,
    split_dataset,
)
from .mask_ops import OpenContour
from .pipeline import build_sketch_pairs, prepare_ldm_data, reconstruction_eval
from .pngio import decode_png8, decode_png16, encode_png8, encode_png16
from .sketch_refiner import (
    CCLossConfig,
    RefinerTrainConfig,
    load_refiner,
    save_refiner,
    train_refiner,
)
from .sketch_synthesis import DeformationParams
from .vae_gan import VAEConfig, load_vae, save_vae, train_vae

MANIFEST_SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_device() -> str:
    """SKEDIT_DEVICE wins; otherwise cuda when available, else cpu."""
    import torch

    requested = os.environ.get("SKEDIT_DEVICE")
    if requested:
        if requested.startswith("cuda") and not torch.cuda.is_available():
            print(f"warning: {requested} requested but CUDA unavailable; using cpu", file=sys.stderr)
            return "cpu"
        return requested
    return "cuda" if torch.cuda.is_available() else "cpu"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "schema_version": MANIFEST_SCHEMA,
        "skedit_version": __version__,
        "device": resolve_device(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _load_pairs(pairs_dir: Path):
    pairs = []
    for sketch_path in sorted(Path(pairs_dir).glob("sketch_*.png")):
        edge_path = sketch_path.with_name(sketch_path.name.replace("sketch_", "edge_"))
        sketch = (decode_png8(sketch_path.read_bytes()) > 0.5).astype(np.uint8)
        edge = (decode_png8(edge_path.read_bytes()) > 0.5).astype(np.uint8)
        pairs.append((sketch, edge))
    return pairs


def build_parser() -> _Parser:
    parser = _Parser(prog="skedit", description=__doc__)
    parser.add_argument("--config", type=Path, default=None, help="JSON file presetting flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate phantom records")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth-sketches", help="write (sketch, edge) training pairs")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sigma0", type=float, default=4.0)
    p.add_argument("--sigma-smooth", type=float, default=6.0)
    p.add_argument("--erosion-probability", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-refiner", help="train the sketch refinement U-Net")
    p.add_argument("--pairs", type=Path, required=True, help="directory from synth-sketches")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda-pix", type=float, default=0.1)
    p.add_argument("--pure-cc", action="store_true", help="ablation: drop the L1 stabilizer")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-vae", help="train the VAE-GAN compressor")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=1500, help="desk-scale default; paper uses 20000")
    p.add_argument("--batch-size", type=int, default=8, help="desk-scale default; paper uses 64")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--disc-warmup-steps", type=int, default=500)
    p.add_argument("--crop-size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-ldm", help="train the conditioned latent diffusion model")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--refiner", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=2000, help="desk-scale default; paper uses 40000")
    p.add_argument("--batch-size", type=int, default=8, help="desk-scale default; paper uses 20")
    p.add_argument("--lr", type=float, default=2e-4, help="desk-scale default; paper uses 1e-5")
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("edit", help="edit one slice with a sketch")
    p.add_argument("--image", type=Path, required=True, help="16-bit grayscale PNG")
    p.add_argument("--sketch", type=Path, required=True, help="8-bit {0,255} PNG")
    p.add_argument("--spacing", type=str, default="1,1,1", help="sx,sy,sz in mm")
    p.add_argument("--refiner", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--ldm", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sampler-steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="reconstruction-mode evaluation report")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--refiner", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--ldm", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument(
        "--conditions", type=str, default="accurate-edge,refined-sketch,unrefined"
    )
    p.add_argument("--limit", type=int, default=None, help="max slices per condition")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP edit service")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--refiner", type=Path, default=None)
    p.add_argument("--vae", type=Path, default=None)
    p.add_argument("--ldm", type=Path, default=None)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--save-dir", type=Path, default=None)

    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    # peel --config first so file values become subparser defaults; flags win
    pre = _Parser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        presets = json.loads(Path(known.config).read_text())
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    sub.set_defaults(
                        **{k: v for k, v in presets.items() if _has_dest(sub, k)}
                    )
    return parser.parse_args(argv)


def _has_dest(subparser, dest: str) -> bool:
    return any(a.dest == dest for a in subparser._actions)


def _load_models(args) -> EditModels:
    refiner, _ = load_refiner(args.refiner)
    vae, _ = load_vae(args.vae)
    denoiser = load_ldm(args.ldm)
    return EditModels(
        refiner=refiner, vae=vae, denoiser=denoiser, versions={"skedit": __version__}
    )


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _dispatch(args)
    except (OpenContour, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "synth-data":
        args.out.mkdir(parents=True, exist_ok=True)
        for i in range(args.n):
            spec = random_phantom_spec(args.size, args.seed * 100_003 + i)
            save_record(generate_phantom(spec), args.out)
        write_manifest(args.out, cmd, {"n": args.n, "size": args.size}, args.seed)
        print(f"wrote {args.n} phantom records to {args.out}")

    elif cmd == "synth-sketches":
        records = load_dataset(args.data_root)
        params = DeformationParams(
            sigma0=args.sigma0,
            sigma_smooth=args.sigma_smooth,
            erosion_probability=args.erosion_probability,
        )
        pairs = build_sketch_pairs(records, params, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        for i, (sketch, edge) in enumerate(pairs):
            (args.out / f"sketch_{i:04d}.png").write_bytes(encode_png8(sketch.astype(np.float64)))
            (args.out / f"edge_{i:04d}.png").write_bytes(encode_png8(edge.astype(np.float64)))
        write_manifest(
            args.out, cmd, {"sigma0": args.sigma0, "sigma_smooth": args.sigma_smooth}, args.seed
        )
        print(f"wrote {len(pairs)} sketch/edge pairs to {args.out}")

    elif cmd == "train-refiner":
        pairs = _load_pairs(args.pairs)
        config = RefinerTrainConfig(
            lr=args.lr,
            batch_size=args.batch_size,
            steps=args.steps,
            lambda_pix=0.0 if args.pure_cc else args.lambda_pix,
            depth=args.depth,
            base_channels=args.base_channels,
            seed=args.seed,
        )
        model, history = train_refiner(pairs, config)
        args.out.mkdir(parents=True, exist_ok=True)
        save_refiner(model, config, args.out / "refiner.pt")
        (args.out / "loss_history.json").write_text(json.dumps(history))
        write_manifest(args.out, cmd, {"steps": args.steps, "lr": args.lr}, args.seed)
        print(f"refiner loss {history[0]:.4f} -> {history[-1]:.4f} over {args.steps} steps")

    elif cmd == "train-vae":
        records = load_dataset(args.data_root)
        train, _ = split_dataset(records, args.seed)
        slices = [s for r in train for s in r.slices]
        config = VAEConfig(
            base_channels=args.base_channels,
            batch_size=args.batch_size,
            steps=args.steps,
            lr=args.lr,
            disc_warmup_steps=args.disc_warmup_steps,
            crop_size=args.crop_size,
            seed=args.seed,
        )
        vae, disc, history = train_vae(slices, config)
        args.out.mkdir(parents=True, exist_ok=True)
        save_vae(vae, disc, args.out / "vae.pt")
        (args.out / "loss_history.json").write_text(json.dumps(history))
        write_manifest(args.out, cmd, {"steps": args.steps, "lr": args.lr}, args.seed)
        print(f"vae total loss {history[0]['total']:.4f} -> {history[-1]['total']:.4f}")

    elif cmd == "train-ldm":
        records = load_dataset(args.data_root)
        train, _ = split_dataset(records, args.seed)
        refiner, _ = load_refiner(args.refiner / "refiner.pt" if args.refiner.is_dir() else args.refiner)
        vae, _ = load_vae(args.vae / "vae.pt" if args.vae.is_dir() else args.vae)
        latents, conditions = prepare_ldm_data(
            train, refiner, vae, DeformationParams(), args.seed
        )
        config = LDMConfig(
            base_channels=args.base_channels,
            batch_size=args.batch_size,
            steps=args.steps,
            lr=args.lr,
            latent_channels=vae.config.latent_channels,
            downsample_factor=vae.config.downsample_factor,
            seed=args.seed,
        )
        model, history = train_ldm(latents, conditions, config)
        args.out.mkdir(parents=True, exist_ok=True)
        save_ldm(model, args.out / "ldm.pt")
        (args.out / "loss_history.json").write_text(json.dumps(history))
        write_manifest(args.out, cmd, {"steps": args.steps, "lr": args.lr}, args.seed)
        print(f"ldm loss {history[0]:.4f} -> {history[-1]:.4f} over {args.steps} steps")

    elif cmd == "edit":
        models = _load_models(args)
        image = decode_png16(args.image.read_bytes())
        sketch = (decode_png8(args.sketch.read_bytes()) > 0.5).astype(np.uint8)
        spacing = tuple(float(x) for x in args.spacing.split(","))
        result = edit_image(
            image, sketch, spacing, models, seed=args.seed, sampler_steps=args.sampler_steps
        )
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "edited.png").write_bytes(encode_png16(result.edited))
        (args.out / "interior_mask.png").write_bytes(
            encode_png8(result.interior.astype(np.float64))
        )
        (args.out / "reference_map.png").write_bytes(encode_png16(result.reference))
        diff_scale = float(result.difference.max()) or 1.0
        (args.out / "difference_map.png").write_bytes(
            encode_png8(result.difference / diff_scale)
        )
        write_manifest(
            args.out,
            cmd,
            {"spacing": spacing, "sampler_steps": args.sampler_steps, "diff_scale": diff_scale},
            args.seed,
        )
        print(f"edit written to {args.out}")

    elif cmd == "eval":
        models = _load_models(args)
        records = load_dataset(args.data_root)
        _, test = split_dataset(records, args.seed)
        reports = []
        for condition in args.conditions.split(","):
            report = reconstruction_eval(
                test, models, condition.strip(), DeformationParams(), args.seed, limit=args.limit
            )
            reports.append(report)
            print(report.format_table())
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval_report.json").write_text(
            json.dumps([r.to_dict() for r in reports], indent=2)
        )
        write_manifest(args.out, cmd, {"conditions": args.conditions}, args.seed)

    elif cmd == "serve":
        import uvicorn

        from .edit_service import create_app

        app = create_app(
            args.data_root,
            refiner_path=args.refiner,
            vae_path=args.vae,
            ldm_path=args.ldm,
            save_dir=args.save_dir,
        )
        uvicorn.run(app, host="127.0.0.1", port=args.port)

    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
