"""Sketch- and reference-conditioned latent diffusion model.

A time-conditional U-Net predicts noise in the VAE latent space. A trainable
copy of its encoder (the control branch) consumes the noisy latent plus the
summed sketch/structure features and feeds the backbone decoder through
zero-initialized 1x1 convolutions, so conditioning starts as an exact no-op.
Voxel spacing replaces text prompts as the global condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .mask_ops import interior_mask, reference_map
from .sketch_refiner import RefinerUNet, refine
from .vae_gan import VAE, decode_latent

CHECKPOINT_SCHEMA = 1


# ---------------------------------------------------------------------------
# Noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    alpha_bar: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        betas = np.linspace(self.beta_start, self.beta_end, self.timesteps)
        alpha_bar = np.cumprod(1.0 - betas)
        if not (np.diff(alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (0.0 < alpha_bar[-1] < 1.0):
            raise ValueError("alpha_bar must stay inside (0, 1)")
        object.__setattr__(self, "alpha_bar", alpha_bar)


def forward_noise(z: np.ndarray, t: int, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward corruption z_t = sqrt(ab_t) z + sqrt(1-ab_t) eps."""
    if not 0 <= t < schedule.timesteps:
        raise ValueError(f"t={t} outside [0, {schedule.timesteps})")
    if z.shape != epsilon.shape:
        raise ValueError("epsilon must match z in shape")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * z + np.sqrt(1.0 - ab) * epsilon


@dataclass(frozen=True)
class SpacingVector:
    v: tuple[float, float, float]

    def __post_init__(self):
        if len(self.v) != 3 or any(c <= 0 for c in self.v):
            raise ValueError("spacing must be three strictly positive components")


# ---------------------------------------------------------------------------
# Network building blocks


def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard transformer-style sinusoidal embedding of a scalar batch."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32, device=x.device) / half
    )
    args = x.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(math.gcd(8, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(math.gcd(8, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, t_emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(math.gcd(8, channels), channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x):
        b, c, h, w = x.shape
        flat = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        out, _ = self.attn(flat, flat, flat, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class _Encoder(nn.Module):
    """Backbone encoder stack; the control branch instantiates its own copy."""

    def __init__(self, in_channels: int, base: int, mults: tuple[int, ...], time_dim: int):
        super().__init__()
        self.conv_in = nn.Conv2d(in_channels, base, 3, padding=1)
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = base
        self.skip_channels = [base]
        for i, mult in enumerate(mults):
            cout = base * mult
            self.blocks.append(ResBlock(ch, cout, time_dim))
            ch = cout
            self.skip_channels.append(ch)
            if i < len(mults) - 1:
                self.downs.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
                self.skip_channels.append(ch)
        self.mid1 = ResBlock(ch, ch, time_dim)
        self.mid_attn = SelfAttention2d(ch)
        self.mid2 = ResBlock(ch, ch, time_dim)
        self.out_channels = ch

    def forward(self, x, t_emb, entry_offset: torch.Tensor | None = None):
        h = self.conv_in(x)
        if entry_offset is not None:
            h = h + entry_offset
        skips = [h]
        down_iter = iter(self.downs)
        for i, block in enumerate(self.blocks):
            h = block(h, t_emb)
            skips.append(h)
            if i < len(self.blocks) - 1:
                h = next(down_iter)(h)
                skips.append(h)
        h = self.mid2(self.mid_attn(self.mid1(h, t_emb)), t_emb)
        return skips, h


class ConditionEncoder(nn.Module):
    """Compact strided conv net mapping an image-resolution raster to
    latent-resolution features; final layer zero-initialized."""

    def __init__(self, downsample_factor: int, out_channels: int, base: int = 16):
        super().__init__()
        n_down = downsample_factor.bit_length() - 1
        layers = [nn.Conv2d(1, base, 3, padding=1), nn.SiLU()]
        ch = base
        for _ in range(n_down):
            layers += [nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1), nn.SiLU()]
            ch *= 2
        layers += [zero_module(nn.Conv2d(ch, out_channels, 1))]
        self.net = nn.Sequential(*layers)
        self.downsample_factor = downsample_factor

    def forward(self, x):
        if x.shape[-1] % self.downsample_factor or x.shape[-2] % self.downsample_factor:
            raise ValueError("condition raster sides must be divisible by the downsample factor")
        return self.net(x)


@dataclass
class ConditionBundle:
    """Encoded conditioning: summed control-entry features + spacing embedding."""

    control_entry: torch.Tensor  # C_s + C_r at latent resolution
    v_embed: torch.Tensor


@dataclass(frozen=True)
class LDMConfig:
    latent_channels: int = 4
    base_channels: int = 64
    channel_mults: tuple[int, ...] = (1, 2, 2)
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    lr: float = 1e-5       # paper full-scale default; desk runs override
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 20   # paper full-scale default
    steps: int = 40000     # paper full-scale default
    ddim_steps: int = 50
    x0_clip: float | None = 1.75  # clamp on x0 estimates in units of latent std
    downsample_factor: int = 4
    spacing_freqs: int = 16
    seed: int = 0

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.timesteps, self.beta_start, self.beta_end)


class ConditionedDenoiser(nn.Module):
    """Backbone U-Net + control branch + sketch/structure/spacing encoders."""

    def __init__(self, config: LDMConfig):
        super().__init__()
        self.config = config
        base = config.base_channels
        time_dim = base * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(base, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.spacing_mlp = nn.Sequential(
            nn.Linear(3 * config.spacing_freqs * 2, time_dim),
            nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )

        self.encoder = _Encoder(config.latent_channels, base, config.channel_mults, time_dim)
        self.control = _Encoder(config.latent_channels, base, config.channel_mults, time_dim)
        self.control_zero = nn.ModuleList(
            zero_module(nn.Conv2d(c, c, 1)) for c in self.encoder.skip_channels
        )
        self.control_zero_mid = zero_module(
            nn.Conv2d(self.encoder.out_channels, self.encoder.out_channels, 1)
        )

        self.sketch_encoder = ConditionEncoder(config.downsample_factor, base)
        self.structure_encoder = ConditionEncoder(config.downsample_factor, base)

        # decoder mirrors the encoder: two res blocks per level consume the
        # 2L skip tensors, upsampling between levels
        mults = config.channel_mults
        skip_chs = list(self.encoder.skip_channels)
        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        ch = self.encoder.out_channels
        for i in reversed(range(len(mults))):
            cout = base * mults[i]
            for _ in range(2):
                self.up_blocks.append(ResBlock(ch + skip_chs.pop(), cout, time_dim))
                ch = cout
            if i > 0:
                self.ups.append(nn.ConvTranspose2d(ch, ch, 2, stride=2))
        self.out_norm = nn.GroupNorm(math.gcd(8, ch), ch)
        self.out_conv = nn.Conv2d(ch, config.latent_channels, 3, padding=1)

        # latent normalization factor fitted at training time
        self.register_buffer("latent_scale", torch.ones(()))

    # -- conditioning ------------------------------------------------------

    def embed_spacing(self, spacing: torch.Tensor) -> torch.Tensor:
        """(B,3) positive spacings -> (B, time_dim) embedding."""
        per = [
            sinusoidal_embedding(spacing[:, i], 2 * self.config.spacing_freqs)
            for i in range(3)
        ]
        return self.spacing_mlp(torch.cat(per, dim=-1))

    def encode_conditions(
        self, sketch: torch.Tensor, ref_map: torch.Tensor, spacing: torch.Tensor
    ) -> ConditionBundle:
        """Rasters (B,1,H,W) + spacing (B,3) -> bundle for the denoiser."""
        c_s = self.sketch_encoder(sketch)
        c_r = self.structure_encoder(ref_map)
        return ConditionBundle(control_entry=c_s + c_r, v_embed=self.embed_spacing(spacing))

    def zero_bundle(self, z: torch.Tensor, spacing: torch.Tensor) -> ConditionBundle:
        shape = (z.shape[0], self.config.base_channels, z.shape[2], z.shape[3])
        return ConditionBundle(
            control_entry=torch.zeros(shape, dtype=z.dtype, device=z.device),
            v_embed=self.embed_spacing(spacing),
        )

    # -- denoising ---------------------------------------------------------

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, bundle: ConditionBundle) -> torch.Tensor:
        t_emb = self.time_mlp(sinusoidal_embedding(t, self.config.base_channels)) + bundle.v_embed
        skips, h = self.encoder(z_t, t_emb)
        ctrl_skips, ctrl_mid = self.control(z_t, t_emb, entry_offset=bundle.control_entry)
        skips = [s + zc(c) for s, zc, c in zip(skips, self.control_zero, ctrl_skips)]
        h = h + self.control_zero_mid(ctrl_mid)

        up_iter = iter(self.ups)
        last = len(self.up_blocks) - 1
        for idx, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), t_emb)
            if idx % 2 == 1 and idx != last:
                h = next(up_iter)(h)
        return self.out_conv(F.silu(self.out_norm(h)))


def predict_noise(
    model: ConditionedDenoiser, z_t: torch.Tensor, t: torch.Tensor, bundle: ConditionBundle
) -> torch.Tensor:
    return model(z_t, t, bundle)


# ---------------------------------------------------------------------------
# Training


@dataclass
class ConditionInputs:
    """Image-resolution conditioning rasters plus the physical spacing."""

    sketch: np.ndarray   # soft refined sketch, (H, W) in [0,1]
    ref_map: np.ndarray  # background-preserving reference map, (H, W)
    spacing: tuple[float, float, float]


def train_ldm(
    latents: list[np.ndarray],
    conditions: list[ConditionInputs],
    config: LDMConfig,
    model: ConditionedDenoiser | None = None,
):
    """Jointly train backbone, control branch, and both condition encoders.

    latents are (h, w, d) VAE outputs (frozen upstream); objective is L1
    between true and predicted noise at uniformly sampled t.
    Returns (model, loss_history).
    """
    if len(latents) != len(conditions) or not latents:
        raise ValueError("latents and conditions must be equal-length and nonempty")
    torch.manual_seed(config.seed)
    if model is None:
        model = ConditionedDenoiser(config)
    schedule = config.schedule()
    z_all = torch.stack(
        [torch.as_tensor(z, dtype=torch.float32).permute(2, 0, 1) for z in latents]
    )
    scale = 1.0 / max(float(z_all.std()), 1e-8)
    model.latent_scale.fill_(scale)
    z_all = z_all * scale
    sketches = torch.stack(
        [torch.as_tensor(c.sketch, dtype=torch.float32) for c in conditions]
    ).unsqueeze(1)
    refs = torch.stack(
        [torch.as_tensor(c.ref_map, dtype=torch.float32) for c in conditions]
    ).unsqueeze(1)
    spacings = torch.tensor([c.spacing for c in conditions], dtype=torch.float32)
    alpha_bar = torch.as_tensor(schedule.alpha_bar, dtype=torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    rng = np.random.default_rng(config.seed)
    history = []
    model.train()
    for step in range(config.steps):
        idx = rng.integers(0, len(latents), size=min(config.batch_size, len(latents)))
        z0 = z_all[idx]
        t = torch.as_tensor(rng.integers(0, config.timesteps, size=len(idx)))
        eps = torch.as_tensor(rng.standard_normal(tuple(z0.shape)), dtype=torch.float32)
        ab = alpha_bar[t][:, None, None, None]
        z_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
        bundle = model.encode_conditions(sketches[idx], refs[idx], spacings[idx])
        eps_hat = model(z_t, t, bundle)
        loss = (eps - eps_hat).abs().mean()
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite diffusion loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    model.eval()
    return model, history


# ---------------------------------------------------------------------------
# Sampling


def sample(
    model: ConditionedDenoiser,
    bundle: ConditionBundle,
    shape: tuple[int, int, int],
    steps: int | None = None,
    seed: int = 0,
    method: str = "ddim",
) -> np.ndarray:
    """Draw a latent (h, w, d) conditioned on the bundle.

    DDIM (default) is deterministic given seed and bundle; "ddpm" runs the
    ancestral sampler with posterior variance. x0 estimates are clamped to
    config.x0_clip latent standard deviations (the latents are unit-variance
    inside the sampler), which keeps the deterministic trajectory on the
    data manifold; without it early eps errors at high t are amplified by
    1/sqrt(alpha_bar) and never recovered.
    """
    config = model.config
    schedule = config.schedule()
    steps = steps or config.ddim_steps
    if steps > config.timesteps:
        raise ValueError(f"steps={steps} exceeds T={config.timesteps}")
    h, w, d = shape
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn((1, d, h, w), generator=gen)
    alpha_bar = torch.as_tensor(schedule.alpha_bar, dtype=torch.float32)
    times = np.linspace(0, config.timesteps - 1, steps).round().astype(int)[::-1]
    model.eval()
    with torch.no_grad():
        if method == "ddim":
            for i, t in enumerate(times):
                t_prev = times[i + 1] if i + 1 < len(times) else None
                eps_hat = model(z, torch.tensor([int(t)]), bundle)
                ab_t = alpha_bar[t]
                x0 = (z - torch.sqrt(1.0 - ab_t) * eps_hat) / torch.sqrt(ab_t)
                if config.x0_clip is not None:
                    x0 = x0.clamp(-config.x0_clip, config.x0_clip)
                    # keep z_t, x0, eps consistent after clamping
                    eps_hat = (z - torch.sqrt(ab_t) * x0) / torch.sqrt(1.0 - ab_t)
                if t_prev is None:
                    z = x0
                else:
                    ab_p = alpha_bar[t_prev]
                    z = torch.sqrt(ab_p) * x0 + torch.sqrt(1.0 - ab_p) * eps_hat
        elif method == "ddpm":
            betas = np.linspace(config.beta_start, config.beta_end, config.timesteps)
            for t in range(config.timesteps - 1, -1, -1):
                eps_hat = model(z, torch.tensor([t]), bundle)
                ab_t = alpha_bar[t]
                ab_prev = alpha_bar[t - 1] if t > 0 else torch.tensor(1.0)
                alpha_t = 1.0 - betas[t]
                mean = (z - betas[t] / torch.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha_t)
                if t > 0:
                    var = betas[t] * (1.0 - ab_prev) / (1.0 - ab_t)
                    mean = mean + torch.sqrt(var) * torch.randn(z.shape, generator=gen)
                z = mean
        else:
            raise ValueError(f"unknown sampler {method!r}")
    z = z / model.latent_scale
    return z[0].permute(1, 2, 0).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# End-to-end edit


@dataclass
class EditModels:
    refiner: RefinerUNet
    vae: VAE
    denoiser: ConditionedDenoiser
    versions: dict = field(default_factory=dict)


@dataclass
class EditResult:
    edited: np.ndarray
    interior: np.ndarray
    reference: np.ndarray
    difference: np.ndarray
    refined_soft: np.ndarray
    refined_bin: np.ndarray
    seed: int
    sampler_steps: int
    model_versions: dict


def edit_image(
    image: np.ndarray,
    sketch_raw: np.ndarray,
    spacing: tuple[float, float, float],
    models: EditModels,
    seed: int = 0,
    sampler_steps: int | None = None,
) -> EditResult:
    """Refine the sketch, build the conditioning, sample, decode.

    Raises OpenContour (from interior_mask) when the sketch does not
    enclose a region.
    """
    if models.refiner is None or models.vae is None or models.denoiser is None:
        raise ValueError("all three models (refiner, vae, denoiser) must be loaded")
    soft, hard = refine(models.refiner, sketch_raw)
    return edit_prepared(image, soft, hard, spacing, models, seed=seed, sampler_steps=sampler_steps)


def edit_prepared(
    image: np.ndarray,
    soft: np.ndarray,
    hard: np.ndarray,
    spacing: tuple[float, float, float],
    models: EditModels,
    seed: int = 0,
    sampler_steps: int | None = None,
) -> EditResult:
    """Edit with an already-refined (or ground-truth) sketch raster."""
    SpacingVector(tuple(spacing))
    interior = interior_mask(hard)
    ref = reference_map(image, interior)

    denoiser = models.denoiser
    config = denoiser.config
    steps = sampler_steps or config.ddim_steps
    s_t = torch.as_tensor(soft, dtype=torch.float32)[None, None]
    r_t = torch.as_tensor(ref, dtype=torch.float32)[None, None]
    v_t = torch.tensor([spacing], dtype=torch.float32)
    with torch.no_grad():
        bundle = denoiser.encode_conditions(s_t, r_t, v_t)
    f = config.downsample_factor
    latent_shape = (image.shape[0] // f, image.shape[1] // f, config.latent_channels)
    z0 = sample(denoiser, bundle, latent_shape, steps=steps, seed=seed)
    edited = decode_latent(models.vae, z0)
    return EditResult(
        edited=edited,
        interior=interior,
        reference=ref,
        difference=np.abs(edited - image),
        refined_soft=soft,
        refined_bin=hard,
        seed=seed,
        sampler_steps=steps,
        model_versions=dict(models.versions),
    )


# ---------------------------------------------------------------------------
# Checkpointing


def save_ldm(model: ConditionedDenoiser, path: Path) -> None:
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "kind": "ldm",
            "config": asdict(model.config),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_ldm(path: Path) -> ConditionedDenoiser:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "ldm":
        raise ValueError(f"{path} is not an LDM checkpoint")
    cfg_dict = dict(payload["config"])
    cfg_dict["channel_mults"] = tuple(cfg_dict["channel_mults"])
    model = ConditionedDenoiser(LDMConfig(**cfg_dict))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
