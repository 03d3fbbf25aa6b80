"""Flat ``key = value`` run configuration.

One namespace covers every tunable default in the package (corpus geometry,
codec, conditioning, model dims, optimizer rates, evaluation split). The
format is a plain text file, one assignment per line, ``#`` comments allowed.
Unknown keys are rejected so typos fail loudly, and ``format_config`` is the
exact inverse of ``parse_config`` so the echo stored in checkpoints and
provenance files reparses to the same configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42

    # optional default paths; CLI flags override these
    data_dir: str = ""
    codec_checkpoint: str = ""
    model_checkpoint: str = ""
    features_dir: str = ""

    # synthetic corpus
    corpus_num_classes: int = 3
    corpus_samples_per_class: int = 8
    corpus_image_size: int = 64
    corpus_slices_per_volume: int = 9
    corpus_shape_families: tuple = ("ellipse", "rectangle", "annulus")
    corpus_intensity_low: float = 0.45
    corpus_intensity_high: float = 0.9
    corpus_intensity_jitter: float = 0.04
    corpus_bg_intensity: float = 0.15
    corpus_texture_amp: float = 0.05
    corpus_noise: float = 0.02
    corpus_distractor_prob: float = 0.7
    corpus_min_radius: float = 7.0
    corpus_max_radius: float = 12.0
    corpus_seed: int = 7

    # pseudo-label clustering
    pseudo_threshold_k: float = 1.0
    pseudo_min_size: int = 100

    # episode augmentation
    aug_rotation_deg: float = 20.0
    aug_scale_low: float = 0.9
    aug_scale_high: float = 1.1
    aug_translate_px: float = 4.0
    aug_elastic_px: float = 4.0
    aug_elastic_grid: int = 4

    # latent codec
    codec_mode: str = "trained"  # trained | identity
    codec_latent_channels: int = 4
    codec_downsample_factor: int = 8
    codec_base_channels: int = 32
    codec_train_steps: int = 1500
    codec_batch_size: int = 16
    codec_lr: float = 1e-3
    codec_seed: int = 11

    # visual-to-text conditioning
    cond_feature_dim: int = 192
    cond_patch_size: int = 8
    cond_hidden_dim: int = 256
    cond_text_dim: int = 256
    cond_encoder_seed: int = 1000
    cond_encoder_mode: str = "random"  # random | import

    # denoising model
    model_base_channels: int = 64
    model_channel_mult: tuple = (1, 2)
    model_heads: int = 4
    model_time_dim: int = 128
    model_ffn_mult: int = 4
    model_sim_threshold: float = 0.7
    model_timestep: int = 999
    model_support_tokens: str = "unet"  # unet | raw

    # episodic trainer
    train_iterations: int = 2000
    train_batch_size: int = 1
    train_lr_unet: float = 1e-5
    train_lr_mlp: float = 5e-5
    train_weight_decay: float = 1e-2
    train_grad_clip: float = 1.0
    train_checkpoint_every: int = 500

    # evaluation split
    eval_test_classes: tuple = ()
    eval_support_patient: str = ""
    eval_num_query_volumes: int = 0  # 0 = all

    def override(self, **kwargs) -> "RunConfig":
        bad = [k for k in kwargs if k not in _FIELDS]
        if bad:
            raise ConfigError(f"unknown config key: {bad[0]}")
        return dataclasses.replace(self, **kwargs)

    def test_classes(self) -> tuple:
        """Held-out class ids; defaults to the highest class id."""
        if self.eval_test_classes:
            return tuple(self.eval_test_classes)
        return (self.corpus_num_classes - 1,)

    def train_classes(self) -> tuple:
        held_out = set(self.test_classes())
        return tuple(c for c in range(self.corpus_num_classes) if c not in held_out)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    try:
        if isinstance(f.default, float):
            return float(raw)
        if isinstance(f.default, int):
            return int(raw)
        if isinstance(f.default, tuple):
            if raw == "":
                return ()
            parts = [p.strip() for p in raw.split(",") if p.strip() != ""]
            if key in ("corpus_shape_families",):
                return tuple(parts)
            return tuple(int(p) for p in parts)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for config key {key!r}: {raw!r}") from e


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` text into a RunConfig.

    Raises ConfigError on unknown keys, missing '=', or unparseable values.
    """
    cfg = base if base is not None else RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        updates[key] = _parse_value(key, raw)
    cfg = dataclasses.replace(cfg, **updates)
    validate_config(cfg)
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = [f"{name} = {_format_value(getattr(cfg, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate_config(cfg: RunConfig) -> None:
    if cfg.corpus_num_classes < 2:
        raise ConfigError("corpus_num_classes must be >= 2")
    if cfg.corpus_image_size <= 0:
        raise ConfigError("corpus_image_size must be positive")
    fams = cfg.corpus_shape_families
    if len(fams) != cfg.corpus_num_classes:
        raise ConfigError(
            f"corpus_shape_families lists {len(fams)} families for "
            f"{cfg.corpus_num_classes} classes"
        )
    if len(set(fams)) != len(fams):
        raise ConfigError("corpus_shape_families must be distinct per class")
    known = {"ellipse", "rectangle", "triangle", "annulus"}
    for fam in fams:
        if fam not in known:
            raise ConfigError(f"unknown shape family: {fam}")
    if cfg.codec_mode not in ("trained", "identity"):
        raise ConfigError(f"codec_mode must be 'trained' or 'identity', got {cfg.codec_mode!r}")
    factor = 1 if cfg.codec_mode == "identity" else cfg.codec_downsample_factor
    if cfg.corpus_image_size % factor != 0:
        raise ConfigError("corpus_image_size must be a multiple of codec_downsample_factor")
    if cfg.corpus_image_size % cfg.cond_patch_size != 0:
        raise ConfigError("corpus_image_size must be a multiple of cond_patch_size")
    if cfg.cond_encoder_mode not in ("random", "import"):
        raise ConfigError("cond_encoder_mode must be 'random' or 'import'")
    if cfg.model_support_tokens not in ("unet", "raw"):
        raise ConfigError("model_support_tokens must be 'unet' or 'raw'")
    for key in ("train_iterations", "train_batch_size", "train_checkpoint_every",
                "codec_train_steps", "codec_batch_size", "corpus_samples_per_class",
                "corpus_slices_per_volume"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("train_lr_unet", "train_lr_mlp", "train_grad_clip", "codec_lr"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    for c in cfg.eval_test_classes:
        if not 0 <= c < cfg.corpus_num_classes:
            raise ConfigError(f"eval_test_classes entry {c} out of range")
    if cfg.eval_test_classes and len(set(cfg.eval_test_classes)) == cfg.corpus_num_classes:
        raise ConfigError("eval_test_classes must leave at least one training class")
