"""Episode sampling and paired image/mask augmentation.

An episode is the unit of training and evaluation: K support image/mask
pairs plus one query pair of the same class, drawn from distinct slices.
Augmentation applies one spatial transform to the image (bilinear) and its
mask (nearest-neighbor): rotation, scaling, and translation composed with a
smooth elastic displacement field, all parameterized and resampled through a
single inverse coordinate map.

Coordinate conventions: points are (x, y) = (column, row); the forward
affine map is p' = scale * R(theta) (p - center) + center + t with
R = [[cos, -sin], [sin, cos]] and center = ((W-1)/2, (H-1)/2). The elastic
field is a coarse grid of per-axis displacements (peak magnitude in pixels)
interpolated bicubically onto output coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .errors import SamplingError

SEPARATOR = "/"


@dataclass
class Episode:
    """K support pairs plus one query pair sharing a class."""

    support: list          # [(image, mask)] each (H, W); masks uint8 {0,1}
    query: tuple           # (image, mask)
    class_id: int
    support_keys: tuple = ()   # ("patient/slice", ...) provenance
    query_key: str = ""

    def __post_init__(self):
        if len(self.support) < 1:
            raise SamplingError("episode needs at least one support pair")


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    scale: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0
    elastic: object = None  # (2, g, g) coarse displacement field in pixels, or None


def sample_augment_params(rng: np.random.Generator, cfg: RunConfig) -> AugmentParams:
    elastic = None
    if cfg.aug_elastic_px > 0.0:
        g = max(2, cfg.aug_elastic_grid)
        elastic = rng.uniform(-1.0, 1.0, size=(2, g, g)) * cfg.aug_elastic_px
    return AugmentParams(
        rotation_deg=float(rng.uniform(-cfg.aug_rotation_deg, cfg.aug_rotation_deg)),
        scale=float(rng.uniform(cfg.aug_scale_low, cfg.aug_scale_high)),
        translate_x=float(rng.uniform(-cfg.aug_translate_px, cfg.aug_translate_px)),
        translate_y=float(rng.uniform(-cfg.aug_translate_px, cfg.aug_translate_px)),
        elastic=elastic,
    )


def _inverse_coords(params: AugmentParams, shape):
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ox = xx - params.translate_x - cx
    oy = yy - params.translate_y - cy
    theta = np.deg2rad(params.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    # inverse rotation and scaling of the centered output grid
    in_x = (c * ox + s * oy) / params.scale + cx
    in_y = (-s * ox + c * oy) / params.scale + cy
    if params.elastic is not None:
        field = np.asarray(params.elastic, dtype=np.float64)
        g = field.shape[-1]
        gy = yy * (g - 1) / max(h - 1, 1)
        gx = xx * (g - 1) / max(w - 1, 1)
        in_x = in_x + ndimage.map_coordinates(field[0], [gy, gx], order=3, mode="nearest")
        in_y = in_y + ndimage.map_coordinates(field[1], [gy, gx], order=3, mode="nearest")
    return in_y, in_x


def apply_augment(image: np.ndarray, mask: np.ndarray, params: AugmentParams):
    """Apply one transform to both arrays; image bilinear, mask nearest."""
    if image.shape != mask.shape:
        raise SamplingError("image and mask shapes differ")
    in_y, in_x = _inverse_coords(params, image.shape)
    out_img = ndimage.map_coordinates(image.astype(np.float64), [in_y, in_x],
                                      order=1, mode="constant", cval=0.0)
    out_mask = ndimage.map_coordinates(mask.astype(np.uint8), [in_y, in_x],
                                       order=0, mode="constant", cval=0)
    return out_img.astype(np.float32), out_mask.astype(np.uint8)


def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
            cfg: RunConfig):
    return apply_augment(image, mask, sample_augment_params(rng, cfg))


def transform_point(params: AugmentParams, x: float, y: float, shape):
    """Forward affine image of a point (elastic excluded)."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(params.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    px, py = x - cx, y - cy
    return (params.scale * (c * px - s * py) + cx + params.translate_x,
            params.scale * (s * px + c * py) + cy + params.translate_y)


class EpisodeSampler:
    """Indexes eligible (patient, slice) pairs per class and samples episodes.

    A slice is eligible for a class when its mask is nonempty both at image
    resolution and under top-left subsampling by ``latent_stride`` (the view
    a factor-``latent_stride`` latent grid sees), so downstream masked
    pooling never divides by zero.
    """

    def __init__(self, volumes, class_ids=None, latent_stride: int = 1):
        self.volumes = list(volumes)
        self.latent_stride = max(1, latent_stride)
        self.index = {}
        for vi, vol in enumerate(self.volumes):
            for cid, per_slice in vol.masks.items():
                if class_ids is not None and cid not in class_ids:
                    continue
                for k, m in enumerate(per_slice):
                    s = self.latent_stride
                    if m.any() and m[::s, ::s].any():
                        self.index.setdefault(cid, []).append((vi, k))

    @property
    def class_ids(self):
        return sorted(self.index.keys())

    def eligible_count(self, class_id: int) -> int:
        return len(self.index.get(class_id, ()))

    def sample(self, class_id: int, k: int, rng: np.random.Generator) -> Episode:
        pool = self.index.get(class_id, ())
        if len(pool) < k + 1:
            raise SamplingError(
                f"class {class_id}: need {k + 1} eligible slices, have {len(pool)}")
        picks = rng.choice(len(pool), size=k + 1, replace=False)
        pairs, keys = [], []
        for idx in picks:
            vi, si = pool[int(idx)]
            vol = self.volumes[vi]
            pairs.append((vol.slices[si], vol.masks[class_id][si]))
            keys.append(f"{vol.patient_id}{SEPARATOR}{si}")
        return Episode(support=pairs[:k], query=pairs[k], class_id=class_id,
                       support_keys=tuple(keys[:k]), query_key=keys[k])

    def sample_train(self, train_classes, k: int, rng: np.random.Generator) -> Episode:
        usable = [c for c in train_classes if self.eligible_count(c) >= k + 1]
        if not usable:
            raise SamplingError(f"no train class has {k + 1} eligible slices")
        cid = usable[int(rng.integers(len(usable)))]
        return self.sample(cid, k, rng)
