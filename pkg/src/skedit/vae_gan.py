"""VAE-GAN latent compression: L1 + perceptual + adversarial + KL objectives."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class VAEConfig:
    downsample_factor: int = 4
    latent_channels: int = 4
    base_channels: int = 32
    lambda_recon: float = 1.0
    lambda_lpips: float = 0.5
    lambda_adv: float = 0.05
    lambda_kl: float = 1e-6
    disc_warmup_steps: int = 1000
    batch_size: int = 64   # paper full-scale default; desk runs override
    steps: int = 20000     # paper full-scale default; desk runs override
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    crop_size: int = 96
    seed: int = 0

    def __post_init__(self):
        if self.downsample_factor & (self.downsample_factor - 1):
            raise ValueError("downsample_factor must be a power of two")
        for name in ("lambda_recon", "lambda_lpips", "lambda_adv", "lambda_kl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.disc_warmup_steps > self.steps:
            raise ValueError("disc_warmup_steps must not exceed steps")


class VAE(nn.Module):
    def __init__(self, config: VAEConfig):
        super().__init__()
        self.config = config
        n_down = config.downsample_factor.bit_length() - 1
        c = config.base_channels
        enc = [nn.Conv2d(1, c, 3, padding=1), nn.SiLU()]
        for i in range(n_down):
            enc += [nn.Conv2d(c * 2**i, c * 2 ** (i + 1), 4, stride=2, padding=1), nn.SiLU()]
        top = c * 2**n_down
        enc += [nn.Conv2d(top, top, 3, padding=1), nn.SiLU()]
        self.encoder = nn.Sequential(*enc)
        self.to_mu = nn.Conv2d(top, config.latent_channels, 1)
        self.to_logvar = nn.Conv2d(top, config.latent_channels, 1)

        dec = [nn.Conv2d(config.latent_channels, top, 3, padding=1), nn.SiLU()]
        for i in reversed(range(n_down)):
            dec += [
                nn.ConvTranspose2d(c * 2 ** (i + 1), c * 2**i, 4, stride=2, padding=1),
                nn.SiLU(),
            ]
        dec += [nn.Conv2d(c, 1, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor, sample: bool = True):
        """(mu, logvar, z); z = mu in deterministic (sample=False) mode."""
        if x.shape[-1] % self.config.downsample_factor or x.shape[-2] % self.config.downsample_factor:
            raise ValueError(
                f"input sides must be divisible by {self.config.downsample_factor}, got {tuple(x.shape[-2:])}"
            )
        h = self.encoder(x)
        mu = self.to_mu(h)
        logvar = self.to_logvar(h)
        if sample:
            z = mu + torch.exp(0.5 * logvar) * torch.randn_like(mu)
        else:
            z = mu
        return mu, logvar, z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.config.latent_channels:
            raise ValueError(
                f"expected {self.config.latent_channels} latent channels, got {z.shape[1]}"
            )
        return torch.sigmoid(self.decoder(z))


class PatchDiscriminator(nn.Module):
    """PatchGAN-style discriminator emitting a logit map."""

    def __init__(self, base_channels: int = 32, n_layers: int = 3):
        super().__init__()
        layers = [nn.Conv2d(1, base_channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        c = base_channels
        for _ in range(n_layers - 1):
            layers += [nn.Conv2d(c, c * 2, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c *= 2
        layers += [nn.Conv2d(c, 1, 4, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def pyramid_features(x: torch.Tensor, levels: int = 3) -> list[torch.Tensor]:
    """Fixed multi-scale Gaussian-pyramid features for the perceptual term.

    Self-contained (no pretrained weights); a learned perceptual network can
    be substituted by swapping this extractor.
    """
    kernel = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=x.dtype, device=x.device)
    kernel = (kernel[:, None] * kernel[None, :]) / 256.0
    kernel = kernel.expand(x.shape[1], 1, 5, 5)
    feats = [x]
    cur = x
    for _ in range(levels):
        blurred = F.conv2d(F.pad(cur, (2, 2, 2, 2), mode="reflect"), kernel, groups=x.shape[1])
        cur = blurred[..., ::2, ::2]
        feats.append(cur)
    return feats


def perceptual_loss(x: torch.Tensor, y: torch.Tensor, levels: int = 3) -> torch.Tensor:
    fx = pyramid_features(x, levels)
    fy = pyramid_features(y, levels)
    return torch.stack([(a - b).abs().mean() for a, b in zip(fx, fy)]).mean()


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0,1)) averaged per element."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).mean()


def vae_loss(
    x: torch.Tensor,
    x_tilde: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    disc_logits: torch.Tensor | None,
    config: VAEConfig,
) -> dict[str, torch.Tensor]:
    """Weighted generator-side objective; adv is 0 before discriminator warmup
    (signalled by disc_logits=None)."""
    recon = (x - x_tilde).abs().mean()
    lpips = perceptual_loss(x, x_tilde)
    kl = kl_divergence(mu, logvar)
    if disc_logits is None:
        adv = torch.zeros((), dtype=x.dtype, device=x.device)
    else:
        adv = -disc_logits.mean()  # generator hinge
    total = (
        config.lambda_recon * recon
        + config.lambda_lpips * lpips
        + config.lambda_adv * adv
        + config.lambda_kl * kl
    )
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite VAE loss")
    return {"recon": recon, "lpips": lpips, "adv": adv, "kl": kl, "total": total}


def discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Hinge loss: mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))."""
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def _augment(batch: torch.Tensor, crop: int, rng: np.random.Generator) -> torch.Tensor:
    """Random crop + horizontal flip; keeps values in [0,1] untouched."""
    _, _, h, w = batch.shape
    crop = min(crop, h, w)
    out = []
    for img in batch:
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        patch = img[:, top : top + crop, left : left + crop]
        if rng.uniform() < 0.5:
            patch = torch.flip(patch, dims=[-1])
        out.append(patch)
    return torch.stack(out)


def train_vae(slices: list[np.ndarray], config: VAEConfig):
    """Alternating VAE / discriminator optimization on normalized slices.

    Returns (vae, discriminator, history) where history holds per-step loss
    component floats.
    """
    if not slices:
        raise ValueError("empty dataset")
    torch.manual_seed(config.seed)
    vae = VAE(config)
    disc = PatchDiscriminator()
    opt_g = torch.optim.Adam(vae.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    data = torch.stack([torch.as_tensor(s, dtype=torch.float32) for s in slices]).unsqueeze(1)
    rng = np.random.default_rng(config.seed)
    history = []
    for step in range(config.steps):
        idx = rng.integers(0, len(slices), size=min(config.batch_size, len(slices)))
        batch = _augment(data[idx], config.crop_size, rng)
        crop = batch.shape[-1]
        if crop % config.downsample_factor:
            batch = batch[..., : crop - crop % config.downsample_factor, : crop - crop % config.downsample_factor]

        mu, logvar, z = vae.encode(batch)
        x_tilde = vae.decode(z)
        warmed = step >= config.disc_warmup_steps
        logits = disc(x_tilde) if warmed else None
        losses = vae_loss(batch, x_tilde, mu, logvar, logits, config)
        opt_g.zero_grad()
        losses["total"].backward()
        opt_g.step()

        d_loss = None
        if warmed:
            real_logits = disc(batch)
            fake_logits = disc(x_tilde.detach())
            d_loss = discriminator_loss(real_logits, fake_logits)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

        entry = {k: float(v.detach()) for k, v in losses.items()}
        entry["disc"] = float(d_loss.detach()) if d_loss is not None else 0.0
        history.append(entry)
    vae.eval()
    disc.eval()
    return vae, disc, history


# ---------------------------------------------------------------------------
# Numpy-facing helpers used by the edit pipeline


def encode_image(vae: VAE, image: np.ndarray, sample: bool = False) -> np.ndarray:
    """Normalized 2D image -> latent as (h, w, d)."""
    x = torch.as_tensor(np.asarray(image, dtype=np.float32)).unsqueeze(0).unsqueeze(0)
    with torch.no_grad():
        mu, logvar, z = vae.encode(x, sample=sample)
    return z[0].permute(1, 2, 0).numpy().astype(np.float64)


def decode_latent(vae: VAE, latent: np.ndarray) -> np.ndarray:
    """(h, w, d) latent -> 2D image in [0,1]."""
    z = torch.as_tensor(np.asarray(latent, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        x = vae.decode(z)
    return x[0, 0].numpy().astype(np.float64)


def save_vae(vae: VAE, disc: PatchDiscriminator, path: Path) -> None:
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "kind": "vae",
            "config": asdict(vae.config),
            "state_dict": vae.state_dict(),
            "disc_state_dict": disc.state_dict(),
        },
        path,
    )


def load_vae(path: Path) -> tuple[VAE, PatchDiscriminator]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "vae":
        raise ValueError(f"{path} is not a VAE checkpoint")
    config = VAEConfig(**payload["config"])
    vae = VAE(config)
    vae.load_state_dict(payload["state_dict"])
    vae.eval()
    disc = PatchDiscriminator()
    disc.load_state_dict(payload["disc_state_dict"])
    disc.eval()
    return vae, disc
