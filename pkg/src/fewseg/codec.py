"""Latent codec: pixels <-> shared latent space.

Grayscale slices and binary masks are replicated to three channels and
affinely mapped to [-1, 1] (pseudo-RGB) before encoding; decoding averages
the three output channels back to one. The codec itself is a small
convolutional autoencoder (downsample factor 8, 4 latent channels by
default) trained once on corpus slices and masks jointly, then frozen. An
identity mode (factor 1, 3 channels, no weights) isolates downstream modules
from codec error in tests.

The encoder is deterministic: no sampling enters the latent, so one-step
prediction and its MSE objective stay reproducible.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from . import container
from .config import RunConfig
from .errors import ConfigError, DomainError, ShapeError, TrainingError


def to_pseudo_rgb(x: np.ndarray) -> np.ndarray:
    """Replicate a [0,1] grayscale array to 3 identical channels in [-1,1]."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2D array, got shape {x.shape}")
    if not np.isfinite(x).all() or x.min() < 0.0 or x.max() > 1.0:
        raise DomainError("pseudo-RGB input must lie in [0, 1]")
    mapped = 2.0 * x - 1.0
    return np.repeat(mapped[None], 3, axis=0)


def average_channels(img3: np.ndarray) -> np.ndarray:
    img3 = np.asarray(img3)
    if img3.ndim != 3 or img3.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) array, got shape {img3.shape}")
    return (img3[0] + img3[1] + img3[2]) / 3.0


def binarize(score: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Strict threshold: 1 where score > threshold, else 0."""
    score = np.asarray(score)
    if not np.isfinite(score).all():
        raise DomainError("binarize expects finite scores")
    return (score > threshold).astype(np.uint8)


def from_pseudo_range(x: np.ndarray) -> np.ndarray:
    """Inverse of the [-1,1] mapping, back to [0,1] (unclipped)."""
    return (np.asarray(x) + 1.0) / 2.0


class _ConvAutoencoder(nn.Module):
    def __init__(self, latent_channels: int, factor: int, base: int):
        super().__init__()
        n_down = int(round(math.log2(factor)))
        if 2 ** n_down != factor or n_down < 1:
            raise ConfigError(f"codec downsample factor must be a power of 2 >= 2, got {factor}")
        chans = [base if i == 0 else 2 * base for i in range(n_down)]
        enc = []
        prev = 3
        for ch in chans:
            enc += [nn.Conv2d(prev, ch, 3, stride=2, padding=1), nn.SiLU()]
            prev = ch
        enc.append(nn.Conv2d(prev, latent_channels, 3, padding=1))
        self.encoder = nn.Sequential(*enc)
        dec = [nn.Conv2d(latent_channels, chans[-1], 3, padding=1), nn.SiLU()]
        prev = chans[-1]
        for ch in reversed(chans):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(prev, ch, 3, padding=1), nn.SiLU()]
            prev = ch
        dec.append(nn.Conv2d(prev, 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    def forward(self, x):
        return self.decoder(self.encoder(x))


class LatentCodec:
    """Frozen encode/decode pair; ``mode`` is 'trained' or 'identity'."""

    def __init__(self, mode: str, latent_channels: int, factor: int,
                 base: int = 32, net: _ConvAutoencoder | None = None):
        if mode not in ("trained", "identity"):
            raise ConfigError(f"unknown codec mode: {mode}")
        self.mode = mode
        self.base = base
        if mode == "identity":
            self.latent_channels = 3
            self.factor = 1
            self.net = None
        else:
            self.latent_channels = latent_channels
            self.factor = factor
            self.net = net if net is not None else _ConvAutoencoder(latent_channels, factor, base)
            self.net.eval()
            for p in self.net.parameters():
                p.requires_grad_(False)

    @classmethod
    def identity(cls) -> "LatentCodec":
        return cls("identity", 3, 1)

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "LatentCodec":
        if cfg.codec_mode == "identity":
            return cls.identity()
        return cls("trained", cfg.codec_latent_channels, cfg.codec_downsample_factor,
                   cfg.codec_base_channels)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeError(f"encode expects a (3, H, W) array, got shape {x.shape}")
        if x.shape[1] % self.factor or x.shape[2] % self.factor:
            raise ShapeError(
                f"spatial size {x.shape[1:]} not divisible by factor {self.factor}")
        return x

    def encode(self, x: np.ndarray) -> np.ndarray:
        """(3, H, W) pseudo-RGB -> (1, c, H/f, W/f) latent."""
        x = self._check_input(x)
        if self.mode == "identity":
            return x[None].copy()
        with torch.no_grad():
            z = self.net.encoder(torch.from_numpy(x)[None])
        return z.numpy().astype(np.float32)

    def decode(self, z: np.ndarray) -> np.ndarray:
        """(1, c, h, w) latent -> (3, h*f, w*f) pseudo-RGB."""
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 4 or z.shape[0] != 1 or z.shape[1] != self.latent_channels:
            raise ShapeError(
                f"decode expects (1, {self.latent_channels}, h, w), got shape {z.shape}")
        if self.mode == "identity":
            return z[0].copy()
        with torch.no_grad():
            x = self.net.decoder(torch.from_numpy(z))
        return x.numpy()[0].astype(np.float32)

    def encode_gray(self, img: np.ndarray) -> np.ndarray:
        return self.encode(to_pseudo_rgb(img))

    def latent_grid(self, image_size: int):
        return image_size // self.factor, image_size // self.factor

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict:
        if self.mode == "identity":
            return {}
        return {k: v.detach().numpy() for k, v in self.net.state_dict().items()}

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"mode": self.mode, "latent_channels": self.latent_channels,
                "downsample_factor": self.factor, "base_channels": self.base}
        if extra_meta:
            meta.update(extra_meta)
        container.save_container(path, "codec", meta, self.state_arrays())

    @classmethod
    def load(cls, path) -> "LatentCodec":
        kind, meta, arrays = container.load_container(path)
        if kind != "codec":
            raise ConfigError(f"expected a codec checkpoint, got kind {kind!r}: {path}")
        if meta["mode"] == "identity":
            return cls.identity()
        codec = cls("trained", int(meta["latent_channels"]),
                    int(meta["downsample_factor"]), int(meta["base_channels"]))
        state = {k: torch.from_numpy(v) for k, v in arrays.items()}
        codec.net.load_state_dict(state)
        codec.net.eval()
        for p in codec.net.parameters():
            p.requires_grad_(False)
        return codec


def train_codec(images, masks, cfg: RunConfig):
    """Train the autoencoder on pseudo-RGB images and masks jointly.

    Returns (codec, loss_history). Deterministic for a given config; the
    returned codec is frozen.

    images/masks: lists of 2D arrays ([0,1] grayscale and {0,1} masks).
    """
    if cfg.codec_mode == "identity":
        return LatentCodec.identity(), []
    if not images:
        raise TrainingError("codec training set is empty")
    pool = [to_pseudo_rgb(img) for img in images]
    pool += [to_pseudo_rgb(m.astype(np.float32)) for m in masks]
    pool = np.stack(pool)

    torch.manual_seed(cfg.codec_seed)
    net = _ConvAutoencoder(cfg.codec_latent_channels, cfg.codec_downsample_factor,
                           cfg.codec_base_channels)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.codec_lr)
    rng = np.random.default_rng(cfg.codec_seed)
    losses = []
    net.train()
    for step in range(cfg.codec_train_steps):
        picks = rng.integers(0, len(pool), size=min(cfg.codec_batch_size, len(pool)))
        batch = torch.from_numpy(pool[picks])
        recon = net(batch)
        loss = ((recon - batch) ** 2).mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"codec loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.item()))
    return LatentCodec("trained", cfg.codec_latent_channels, cfg.codec_downsample_factor,
                       cfg.codec_base_channels, net=net), losses


# -- reconstruction study ----------------------------------------------------

_SSIM_SIGMA = 1.5
_SSIM_WIN = 11


def _gaussian_kernel():
    half = _SSIM_WIN // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def reconstruction_metrics(orig: np.ndarray, recon: np.ndarray) -> dict:
    """MSE, PSNR (peak 1.0, +inf when identical), and Gaussian-window SSIM.

    SSIM uses an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
    reflect padding, averaged over the full map.
    """
    orig = np.asarray(orig, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if orig.shape != recon.shape:
        raise ShapeError(f"shape mismatch: {orig.shape} vs {recon.shape}")
    eps = 1e-6
    for arr, name in ((orig, "orig"), (recon, "recon")):
        if arr.min() < -eps or arr.max() > 1.0 + eps:
            raise DomainError(f"{name} values must lie in [0, 1]")
    mse = float(((orig - recon) ** 2).mean())
    psnr = float("inf") if mse == 0.0 else -10.0 * math.log10(mse)

    from scipy.ndimage import correlate
    k = _gaussian_kernel()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a = correlate(orig, k, mode="reflect")
    mu_b = correlate(recon, k, mode="reflect")
    var_a = correlate(orig * orig, k, mode="reflect") - mu_a ** 2
    var_b = correlate(recon * recon, k, mode="reflect") - mu_b ** 2
    cov = correlate(orig * recon, k, mode="reflect") - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return {"mse": mse, "psnr": psnr, "ssim": float(ssim_map.mean())}


def roundtrip_image(codec: LatentCodec, img: np.ndarray) -> np.ndarray:
    """Encode/decode a [0,1] image and map back to [0,1] (clipped)."""
    out = average_channels(codec.decode(codec.encode(to_pseudo_rgb(img))))
    return np.clip(from_pseudo_range(out), 0.0, 1.0)


def roundtrip_mask(codec: LatentCodec, mask: np.ndarray) -> np.ndarray:
    """Encode/decode a {0,1} mask and binarize the channel average."""
    out = average_channels(codec.decode(codec.encode(to_pseudo_rgb(mask.astype(np.float32)))))
    return binarize(out, 0.0)
