"""U-Net sketch refinement trained with a region-wise cross-correlation loss.

The loss tiles the image into RxR regions, takes local means over NxN grids
inside each region, and sums the negative Pearson correlation between the
two images' grid means per region.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class CCLossConfig:
    grid_size: int = 4        # N
    regions_per_side: int = 4  # R
    epsilon: float = 1e-8
    stride: int | None = None  # grid stride; defaults to N (non-overlapping)

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.regions_per_side < 1:
            raise ValueError("regions_per_side must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")


def _pad_to_multiple(x: torch.Tensor, multiple: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    return x


def _grid_mean_tensor(img: torch.Tensor, cfg: CCLossConfig) -> torch.Tensor:
    """Grid means grouped by region, shape (R, R, grids_per_region)."""
    n = cfg.grid_size
    r = cfg.regions_per_side
    stride = cfg.stride or n
    x = _pad_to_multiple(img.unsqueeze(0).unsqueeze(0), r * n)
    means = F.avg_pool2d(x, kernel_size=n, stride=stride)[0, 0]
    gh, gw = means.shape
    if gh % r or gw % r:
        raise ValueError("grid layout does not tile evenly into regions")
    return means.reshape(r, gh // r, r, gw // r).permute(0, 2, 1, 3).reshape(r, r, -1)


def grid_means(img: np.ndarray, cfg: CCLossConfig) -> np.ndarray:
    """NxN grid means per region as an (R, R, grids) array."""
    t = torch.as_tensor(np.asarray(img, dtype=np.float64))
    return _grid_mean_tensor(t, cfg).numpy()


def cc_loss_t(sketch: torch.Tensor, edge: torch.Tensor, cfg: CCLossConfig) -> torch.Tensor:
    """Differentiable region-wise CC loss on 2D tensors of equal shape.

    Regions where either side has zero grid-mean variance contribute 0
    (the epsilon guard under the square root makes this automatic).
    """
    if sketch.shape != edge.shape:
        raise ValueError(f"shape mismatch: {tuple(sketch.shape)} vs {tuple(edge.shape)}")
    s = _grid_mean_tensor(sketch, cfg)
    e = _grid_mean_tensor(edge, cfg)
    ds = s - s.mean(dim=-1, keepdim=True)
    de = e - e.mean(dim=-1, keepdim=True)
    num = (ds * de).sum(dim=-1)
    den = torch.sqrt((ds * ds).sum(dim=-1) * (de * de).sum(dim=-1) + cfg.epsilon)
    return -(num / den).sum()


def cc_loss(sketch, edge, cfg: CCLossConfig = CCLossConfig()) -> float:
    s = torch.as_tensor(np.asarray(sketch, dtype=np.float64))
    e = torch.as_tensor(np.asarray(edge, dtype=np.float64))
    return float(cc_loss_t(s, e, cfg))


def refiner_loss_t(
    pred: torch.Tensor, edge: torch.Tensor, cfg: CCLossConfig, lambda_pix: float = 0.1
) -> torch.Tensor:
    """CC loss plus a small L1 stabilizer; lambda_pix=0 gives the pure-CC ablation."""
    loss = cc_loss_t(pred, edge, cfg)
    if lambda_pix != 0.0:
        loss = loss + lambda_pix * (pred - edge).abs().mean()
    return loss


def refiner_loss(pred, edge, cfg: CCLossConfig = CCLossConfig(), lambda_pix: float = 0.1) -> float:
    p = torch.as_tensor(np.asarray(pred, dtype=np.float64))
    e = torch.as_tensor(np.asarray(edge, dtype=np.float64))
    return float(refiner_loss_t(p, e, cfg, lambda_pix))


# ---------------------------------------------------------------------------
# Model


class _DoubleConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.GroupNorm(8, cout),
            nn.SiLU(),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.GroupNorm(8, cout),
            nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class RefinerUNet(nn.Module):
    """Small U-Net: 1 channel in/out, sigmoid squashing, configurable depth."""

    def __init__(self, depth: int = 3, base_channels: int = 32):
        super().__init__()
        self.depth = depth
        chans = [base_channels * 2**i for i in range(depth + 1)]
        self.inc = _DoubleConv(1, chans[0])
        self.down = nn.ModuleList(_DoubleConv(chans[i], chans[i + 1]) for i in range(depth))
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2) for i in reversed(range(depth))
        )
        self.up_conv = nn.ModuleList(
            _DoubleConv(chans[i] * 2, chans[i]) for i in reversed(range(depth))
        )
        self.out = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        skips = []
        h = self.inc(x)
        for block in self.down:
            skips.append(h)
            h = block(F.max_pool2d(h, 2))
        for upsample, conv, skip in zip(self.up, self.up_conv, reversed(skips)):
            h = upsample(h)
            h = conv(torch.cat([h, skip], dim=1))
        return torch.sigmoid(self.out(h))


@dataclass(frozen=True)
class RefinerTrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 16
    steps: int = 2000
    lambda_pix: float = 0.1
    depth: int = 3
    base_channels: int = 32
    seed: int = 0
    cc: CCLossConfig = CCLossConfig()


def train_refiner(pairs: list[tuple[np.ndarray, np.ndarray]], config: RefinerTrainConfig):
    """Train the refiner on (S*, E) pairs; returns (model, loss_history)."""
    if not pairs:
        raise ValueError("no training pairs")
    torch.manual_seed(config.seed)
    model = RefinerUNet(depth=config.depth, base_channels=config.base_channels)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    sketches = torch.stack([torch.as_tensor(s, dtype=torch.float32) for s, _ in pairs])
    edges = torch.stack([torch.as_tensor(e, dtype=torch.float32) for _, e in pairs])
    rng = np.random.default_rng(config.seed)
    history = []
    for step in range(config.steps):
        idx = rng.integers(0, len(pairs), size=min(config.batch_size, len(pairs)))
        batch_s = sketches[idx].unsqueeze(1)
        batch_e = edges[idx].unsqueeze(1)
        pred = model(batch_s)
        loss = torch.stack(
            [
                refiner_loss_t(pred[i, 0], batch_e[i, 0], config.cc, config.lambda_pix)
                for i in range(pred.shape[0])
            ]
        ).mean()
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite refiner loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    return model, history


def refine(model: RefinerUNet, sketch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Refined sketch as (soft in (0,1), binarized at 0.5).

    Inputs whose sides are not multiples of 2^depth are reflect-padded,
    then cropped back.
    """
    h, w = sketch.shape
    mult = 2**model.depth
    ph = (-h) % mult
    pw = (-w) % mult
    x = torch.as_tensor(np.asarray(sketch, dtype=np.float32)).unsqueeze(0).unsqueeze(0)
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    with torch.no_grad():
        soft = model(x)[0, 0, :h, :w].numpy().astype(np.float64)
    return soft, (soft > 0.5).astype(np.uint8)


def save_refiner(model: RefinerUNet, config: RefinerTrainConfig, path: Path) -> None:
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "kind": "refiner",
            "state_dict": model.state_dict(),
            "config": asdict(config),
        },
        path,
    )


def load_refiner(path: Path) -> tuple[RefinerUNet, RefinerTrainConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "refiner":
        raise ValueError(f"{path} is not a refiner checkpoint")
    cfg_dict = dict(payload["config"])
    cfg_dict["cc"] = CCLossConfig(**cfg_dict["cc"])
    config = RefinerTrainConfig(**cfg_dict)
    model = RefinerUNet(depth=config.depth, base_channels=config.base_channels)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, config
