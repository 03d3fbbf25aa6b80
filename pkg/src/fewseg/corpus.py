"""Synthetic volumetric corpus, pseudo-labels, and on-disk dataset layout.

Each generated "patient" is a stack of 2D grayscale slices containing one
labeled object of the patient's class (a shape family drawn at a
class-specific intensity band) that drifts smoothly in position and size
across slices, plus, with some probability, one unlabeled distractor object
from another class's family. Distractors make the segmentation target
ambiguous without support conditioning: slices of held-out classes appear in
training patients only as un-annotated background.

Masks are exact by construction: a pixel is foreground iff its center
satisfies the shape's analytic inequality. Pixel centers are (x, y) =
(column, row) as floats.

Disk layout: ``<root>/<patient_id>/img_<k>.png`` (8-bit grayscale),
``<root>/<patient_id>/mask_<class>_<k>.png`` (0/255, bit-exact round-trip),
plus ``manifest.json`` listing patients, slice counts, and class ids.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import RunConfig
from .errors import ConfigError, DataError

SHAPE_FAMILIES = ("ellipse", "rectangle", "triangle", "annulus")

# extra circumradius applied to triangles so areas stay comparable
_TRIANGLE_SCALE = 1.4
_ANNULUS_HOLE = 0.45
_SIZE_WOBBLE = 0.08  # per-slice relative radius variation


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of the synthetic corpus (one labeled class per patient)."""

    num_classes: int = 3
    samples_per_class: int = 8
    image_size: int = 64
    slices_per_volume: int = 9
    shape_families: tuple = ("ellipse", "rectangle", "annulus")
    intensity_low: float = 0.45
    intensity_high: float = 0.9
    intensity_jitter: float = 0.04
    bg_intensity: float = 0.15
    texture_amp: float = 0.05
    noise: float = 0.02
    distractor_prob: float = 0.7
    min_radius: float = 7.0
    max_radius: float = 12.0
    seed: int = 7

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "CorpusSpec":
        return cls(
            num_classes=cfg.corpus_num_classes,
            samples_per_class=cfg.corpus_samples_per_class,
            image_size=cfg.corpus_image_size,
            slices_per_volume=cfg.corpus_slices_per_volume,
            shape_families=tuple(cfg.corpus_shape_families),
            intensity_low=cfg.corpus_intensity_low,
            intensity_high=cfg.corpus_intensity_high,
            intensity_jitter=cfg.corpus_intensity_jitter,
            bg_intensity=cfg.corpus_bg_intensity,
            texture_amp=cfg.corpus_texture_amp,
            noise=cfg.corpus_noise,
            distractor_prob=cfg.corpus_distractor_prob,
            min_radius=cfg.corpus_min_radius,
            max_radius=cfg.corpus_max_radius,
            seed=cfg.corpus_seed,
        )

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("corpus needs at least 2 classes")
        if self.image_size <= 0:
            raise ConfigError("image_size must be positive")
        if self.slices_per_volume < 3:
            raise ConfigError("volumes need at least 3 slices")
        if len(self.shape_families) != self.num_classes:
            raise ConfigError("one shape family per class required")
        if len(set(self.shape_families)) != len(self.shape_families):
            raise ConfigError("shape families must be distinct across classes")
        for fam in self.shape_families:
            if fam not in SHAPE_FAMILIES:
                raise ConfigError(f"unknown shape family: {fam}")
        if not 0.0 < self.min_radius <= self.max_radius:
            raise ConfigError("need 0 < min_radius <= max_radius")
        if self.max_radius * 2.5 >= self.image_size:
            raise ConfigError("max_radius too large for image_size")

    def class_band(self, class_id: int) -> float:
        """Center of the class's foreground intensity band (evenly spaced)."""
        if self.num_classes == 1:
            return 0.5 * (self.intensity_low + self.intensity_high)
        step = (self.intensity_high - self.intensity_low) / (self.num_classes - 1)
        return self.intensity_low + class_id * step


@dataclass
class VolumeRecord:
    """Ordered slice stack with per-class masks for one patient."""

    patient_id: str
    slices: list = field(default_factory=list)  # (H, W) float32 in [0, 1]
    masks: dict = field(default_factory=dict)   # class_id -> list of (H, W) uint8 {0,1}

    def __post_init__(self):
        if not self.slices:
            raise DataError(f"volume {self.patient_id}: no slices")
        shape = self.slices[0].shape
        for s in self.slices:
            if s.shape != shape or s.ndim != 2:
                raise DataError(f"volume {self.patient_id}: inconsistent slice shapes")
        for cid, per_slice in self.masks.items():
            if len(per_slice) != len(self.slices):
                raise DataError(
                    f"volume {self.patient_id}: class {cid} masks do not align with slices")
            for m in per_slice:
                if m.shape != shape:
                    raise DataError(f"volume {self.patient_id}: mask shape mismatch")
                vals = np.unique(m)
                if not np.all(np.isin(vals, (0, 1))):
                    raise DataError(f"volume {self.patient_id}: mask values must be 0/1")

    @property
    def class_ids(self) -> set:
        return set(self.masks.keys())

    @property
    def num_slices(self) -> int:
        return len(self.slices)


def inside_shape(family, xx, yy, cx, cy, radius, aspect, angle):
    """Boolean membership of pixel centers (xx, yy) in one analytic shape.

    ellipse:   rotated frame u,v; (u/radius)^2 + (v/(radius*aspect))^2 <= 1
    rectangle: rotated frame; |u| <= radius and |v| <= radius*aspect
    triangle:  vertices at angle + k*2pi/3 on a circle of radius
               1.4*radius; inside = all edge cross-products on one side
    annulus:   (0.45*radius)^2 <= (x-cx)^2 + (y-cy)^2 <= radius^2
    """
    px = xx - cx
    py = yy - cy
    if family == "annulus":
        rr = px * px + py * py
        return (rr <= radius * radius) & (rr >= (_ANNULUS_HOLE * radius) ** 2)
    c, s = np.cos(angle), np.sin(angle)
    if family == "ellipse":
        u = c * px + s * py
        v = -s * px + c * py
        return (u / radius) ** 2 + (v / (radius * aspect)) ** 2 <= 1.0
    if family == "rectangle":
        u = c * px + s * py
        v = -s * px + c * py
        return (np.abs(u) <= radius) & (np.abs(v) <= radius * aspect)
    if family == "triangle":
        r = _TRIANGLE_SCALE * radius
        verts = [(cx + r * np.cos(angle + k * 2.0 * np.pi / 3.0),
                  cy + r * np.sin(angle + k * 2.0 * np.pi / 3.0)) for k in range(3)]
        area2 = ((verts[1][0] - verts[0][0]) * (verts[2][1] - verts[0][1])
                 - (verts[2][0] - verts[0][0]) * (verts[1][1] - verts[0][1]))
        orient = 1.0 if area2 >= 0 else -1.0
        inside = np.ones_like(xx, dtype=bool)
        for k in range(3):
            ax, ay = verts[k]
            bx, by = verts[(k + 1) % 3]
            cross = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
            inside &= orient * cross >= 0.0
        return inside
    raise ConfigError(f"unknown shape family: {family}")


def _outer_radius(family, radius, aspect):
    if family == "rectangle":
        return radius * float(np.hypot(1.0, aspect))
    if family == "triangle":
        return _TRIANGLE_SCALE * radius
    return radius


@dataclass
class _Track:
    family: str
    class_id: int
    radius: float
    aspect: float
    angle: float
    intensity: float
    cx: float
    cy: float
    drift_x: float
    drift_y: float
    phase: float
    tex_fx: float
    tex_fy: float
    tex_phase: float

    def at(self, k: int, n: int):
        """Center and radius of the object on slice k of n."""
        t = k - 0.5 * (n - 1)
        r = self.radius * (1.0 + _SIZE_WOBBLE * np.sin(self.phase + 2.0 * np.pi * k / n))
        return self.cx + self.drift_x * t, self.cy + self.drift_y * t, r

    def reach(self, n: int) -> float:
        drift = float(np.hypot(self.drift_x, self.drift_y)) * 0.5 * (n - 1)
        return _outer_radius(self.family, self.radius * (1.0 + _SIZE_WOBBLE), self.aspect) + drift


def _sample_track(rng, spec: CorpusSpec, class_id: int, shrink: float):
    fam = spec.shape_families[class_id]
    lo, hi = spec.min_radius, spec.min_radius + (spec.max_radius - spec.min_radius) * shrink
    radius = rng.uniform(lo, hi)
    aspect = rng.uniform(0.7, 0.95)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    intensity = spec.class_band(class_id) + rng.uniform(-1.0, 1.0) * spec.intensity_jitter
    speed = rng.uniform(0.1, 0.5)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return _Track(
        family=fam, class_id=class_id, radius=radius, aspect=aspect, angle=angle,
        intensity=float(np.clip(intensity, 0.0, 1.0)),
        cx=0.0, cy=0.0,
        drift_x=speed * float(np.cos(theta)), drift_y=speed * float(np.sin(theta)),
        phase=rng.uniform(0.0, 2.0 * np.pi),
        tex_fx=rng.uniform(0.02, 0.06), tex_fy=rng.uniform(0.02, 0.06),
        tex_phase=rng.uniform(0.0, 2.0 * np.pi),
    )


def _place_tracks(rng, tracks, size, n):
    """Assign non-overlapping drifting centers; False if placement failed."""
    margin = 2.0
    for i, tr in enumerate(tracks):
        reach = tr.reach(n)
        lo, hi = reach + margin, size - 1 - reach - margin
        if lo >= hi:
            return False
        for _ in range(40):
            cx, cy = rng.uniform(lo, hi), rng.uniform(lo, hi)
            ok = all(np.hypot(cx - o.cx, cy - o.cy) >= tr.reach(n) + o.reach(n) + margin
                     for o in tracks[:i])
            if ok:
                tr.cx, tr.cy = cx, cy
                break
        else:
            return False
    return True


def _render_volume(rng, spec: CorpusSpec, tracks, class_id: int):
    size, n = spec.image_size, spec.slices_per_volume
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    slices, masks = [], []
    for k in range(n):
        img = np.full((size, size), spec.bg_intensity, dtype=np.float64)
        primary_mask = None
        for tr in tracks:
            cx, cy, r = tr.at(k, n)
            member = inside_shape(tr.family, xx, yy, cx, cy, r, tr.aspect, tr.angle)
            texture = spec.texture_amp * np.sin(
                2.0 * np.pi * (tr.tex_fx * xx + tr.tex_fy * yy) + tr.tex_phase)
            img[member] = tr.intensity + texture[member]
            if tr.class_id == class_id:
                primary_mask = member
        if spec.noise > 0.0:
            img = img + rng.normal(0.0, spec.noise, size=img.shape)
        slices.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        masks.append(primary_mask.astype(np.uint8))
    return slices, masks


def generate_synthetic_corpus(spec: CorpusSpec, min_latent_stride: int = 8):
    """Generate ``num_classes * samples_per_class`` single-class volumes.

    Deterministic for a given spec. ``min_latent_stride`` guarantees every
    mask stays nonempty under top-left subsampling by that stride (the
    nearest-neighbor view a factor-``stride`` latent grid sees); volumes
    violating it are redrawn.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    volumes = []
    for class_id in range(spec.num_classes):
        for sample in range(spec.samples_per_class):
            pid = f"c{class_id}p{sample:02d}"
            vol = None
            shrink = 1.0
            for attempt in range(60):
                tracks = [_sample_track(rng, spec, class_id, shrink)]
                others = [c for c in range(spec.num_classes) if c != class_id]
                if others and rng.uniform() < spec.distractor_prob:
                    osel = others[rng.integers(len(others))]
                    tracks.append(_sample_track(rng, spec, osel, shrink))
                if not _place_tracks(rng, tracks, spec.image_size, spec.slices_per_volume):
                    shrink = max(0.2, shrink * 0.8)
                    continue
                slices, masks = _render_volume(rng, spec, tracks, class_id)
                stride = max(1, min_latent_stride)
                if all(m[::stride, ::stride].any() for m in masks):
                    vol = VolumeRecord(patient_id=pid, slices=slices,
                                       masks={class_id: masks})
                    break
            if vol is None:
                raise DataError(f"could not place objects for volume {pid}; "
                                "reduce radii or distractor count")
            volumes.append(vol)
    return volumes


def generate_pseudo_labels(volume: VolumeRecord, threshold_k: float = 1.0,
                           min_size: int = 100) -> VolumeRecord:
    """Class-agnostic pseudo-labels from intensity clustering.

    Voxels brighter than mean + threshold_k * std (over the whole volume)
    are clustered by 3D 6-connected components; components smaller than
    ``min_size`` voxels are dropped. Labels are 1..L (0 = background) and
    disjoint by construction. A structure-free volume yields no labels.
    """
    stack = np.stack(volume.slices).astype(np.float64)
    cutoff = stack.mean() + threshold_k * stack.std()
    fg = stack > cutoff
    structure = ndimage.generate_binary_structure(3, 1)
    labeled, num = ndimage.label(fg, structure=structure)
    masks = {}
    next_id = 1
    for lab in range(1, num + 1):
        region = labeled == lab
        if region.sum() < min_size:
            continue
        masks[next_id] = [region[k].astype(np.uint8) for k in range(stack.shape[0])]
        next_id += 1
    return VolumeRecord(patient_id=volume.patient_id, slices=list(volume.slices),
                        masks=masks)


# ---------------------------------------------------------------------------
# disk layout


def save_dataset(volumes, root) -> None:
    os.makedirs(root, exist_ok=True)
    manifest = {"image_size": int(volumes[0].slices[0].shape[0]), "patients": []}
    for vol in sorted(volumes, key=lambda v: v.patient_id):
        pdir = os.path.join(root, vol.patient_id)
        os.makedirs(pdir, exist_ok=True)
        for k, img in enumerate(vol.slices):
            arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(os.path.join(pdir, f"img_{k}.png"))
        for cid, per_slice in sorted(vol.masks.items()):
            for k, m in enumerate(per_slice):
                arr = (m.astype(np.uint8) * 255)
                Image.fromarray(arr, mode="L").save(
                    os.path.join(pdir, f"mask_{cid}_{k}.png"))
        manifest["patients"].append({
            "id": vol.patient_id,
            "num_slices": vol.num_slices,
            "class_ids": sorted(int(c) for c in vol.class_ids),
        })
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(root):
    mpath = os.path.join(root, "manifest.json")
    if not os.path.isfile(mpath):
        raise DataError(f"dataset manifest not found: {mpath}")
    with open(mpath, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    volumes = []
    for entry in manifest["patients"]:
        pid = entry["id"]
        pdir = os.path.join(root, pid)
        slices, masks = [], {cid: [] for cid in entry["class_ids"]}
        for k in range(entry["num_slices"]):
            ipath = os.path.join(pdir, f"img_{k}.png")
            if not os.path.isfile(ipath):
                raise DataError(f"missing slice image: {ipath}")
            img = np.asarray(Image.open(ipath), dtype=np.float32) / 255.0
            slices.append(img)
            for cid in entry["class_ids"]:
                mpath_k = os.path.join(pdir, f"mask_{cid}_{k}.png")
                if not os.path.isfile(mpath_k):
                    raise DataError(f"missing mask image: {mpath_k}")
                raw = np.asarray(Image.open(mpath_k))
                if not np.all(np.isin(np.unique(raw), (0, 255))):
                    raise DataError(f"mask not 0/255 valued: {mpath_k}")
                masks[cid].append((raw == 255).astype(np.uint8))
        volumes.append(VolumeRecord(patient_id=pid, slices=slices, masks=masks))
    return volumes
