"""Text and image augmentation plus the dynamic whole-word masking sampler.

All three operations are pure functions of (input, rng state). Image
augmentation parameters are grouped into stage presets; the joint stage
deliberately has no horizontal flip so that left/right location wording in
reports stays aligned with the image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter, map_coordinates, zoom

from .corpus.types import ImageRecord, ReportDocument
from .text.vocab import TokenSequence, Vocabulary

MASK_REPLACE, RANDOM_REPLACE, KEEP_REPLACE = "MASK", "random_token", "keep"

STAGES = ("joint", "image_only", "finetune")


@dataclass
class MaskPlan:
    positions: list[int]
    replacement: list[str]

    def __post_init__(self):
        if list(self.positions) != sorted(self.positions):
            raise ValueError("mask positions must be sorted")
        if len(self.positions) != len(self.replacement):
            raise ValueError("one replacement mode per masked position")


@dataclass
class AugmentParams:
    """Stage-scoped augmentation magnitudes.

    Fields set to None are unavailable for the stage; requesting them is a
    configuration error, caught by ``validate``.
    """

    stage: str
    shear_deg: float = 0.0
    rotate_deg: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0
    hflip_prob: float | None = None
    crop_scale: tuple[float, float] | None = None
    occlusion_scale: tuple[float, float] | None = None
    occlusion_ratio: tuple[float, float] | None = None
    elastic_sigma_alpha: tuple[float, float] | None = None
    elastic_prob: float | None = None
    gaussian_noise: float | None = None

    def validate(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        extras = {
            "hflip_prob": self.hflip_prob,
            "crop_scale": self.crop_scale,
            "occlusion_scale": self.occlusion_scale,
            "occlusion_ratio": self.occlusion_ratio,
            "elastic_sigma_alpha": self.elastic_sigma_alpha,
            "elastic_prob": self.elastic_prob,
            "gaussian_noise": self.gaussian_noise,
        }
        allowed = {
            "joint": (),
            "image_only": tuple(extras),
            "finetune": ("hflip_prob",),
        }[self.stage]
        for name, value in extras.items():
            if value is not None and name not in allowed:
                raise ValueError(f"{name} is not available in the {self.stage!r} stage")


def joint_augment_params() -> AugmentParams:
    """Joint image-text training magnitudes; no flips by design."""
    return AugmentParams(stage="joint", shear_deg=15.0, rotate_deg=30.0,
                         brightness=0.2, contrast=0.2)


def image_only_augment_params() -> AugmentParams:
    """Image-only pretraining magnitudes (the heaviest stage)."""
    # The published occlusion aspect bounds print as (0.33, 0.3); treated
    # as unordered and sorted here so the range is non-empty.
    return AugmentParams(
        stage="image_only",
        shear_deg=40.0,
        rotate_deg=180.0,
        brightness=0.2,
        contrast=0.2,
        hflip_prob=0.5,
        crop_scale=(0.75, 1.0),
        occlusion_scale=(0.15, 0.4),
        occlusion_ratio=(0.3, 0.33),
        elastic_sigma_alpha=(4.0, 34.0),
        elastic_prob=0.4,
        gaussian_noise=0.05,
    )


def finetune_augment_params() -> AugmentParams:
    return AugmentParams(stage="finetune", shear_deg=25.0, rotate_deg=45.0,
                         brightness=0.2, contrast=0.2, hflip_prob=0.5)


def shuffle_sentences(report: ReportDocument, rng) -> ReportDocument:
    """Independently permute the sentences inside each section."""
    findings = list(report.findings)
    impression = list(report.impression)
    rng.shuffle(findings)
    rng.shuffle(impression)
    return ReportDocument(id=report.id, findings=findings, impression=impression)


def _word_groups(seq: TokenSequence, vocab: Vocabulary) -> list[list[int]]:
    """Positions of maskable tokens grouped into whole words."""
    groups: list[list[int]] = []
    for i, (tid, start) in enumerate(zip(seq.ids, seq.word_starts)):
        if vocab.is_special_id(tid):
            continue
        if start or not groups:
            groups.append([i])
        else:
            groups[-1].append(i)
    return groups


def sample_whole_word_mask(seq: TokenSequence, vocab: Vocabulary, rng,
                           rate: float = 0.15) -> MaskPlan:
    """Sample whole words until at least ceil(rate * maskable) tokens are covered.

    At least one word is always masked. Replacement modes follow the usual
    80/10/10 mask/random/keep split, drawn per token.
    """
    groups = _word_groups(seq, vocab)
    if not groups:
        raise ValueError("sequence has no maskable tokens")
    n_maskable = sum(len(g) for g in groups)
    target = max(1, int(np.ceil(rate * n_maskable)))
    order = rng.permutation(len(groups))
    positions: list[int] = []
    for gi in order:
        positions.extend(groups[gi])
        if len(positions) >= target:
            break
    positions.sort()
    u = rng.random(len(positions))
    replacement = [
        MASK_REPLACE if x < 0.8 else (RANDOM_REPLACE if x < 0.9 else KEEP_REPLACE) for x in u
    ]
    return MaskPlan(positions=positions, replacement=replacement)


def apply_mask_plan(seq: TokenSequence, plan: MaskPlan, vocab: Vocabulary, rng):
    """Apply a mask plan; returns (corrupted ids, targets at masked positions)."""
    from .text.vocab import MASK, SPECIAL_TOKENS

    ids = list(seq.ids)
    targets = []
    n_special = len(SPECIAL_TOKENS)
    for pos, mode in zip(plan.positions, plan.replacement):
        targets.append(seq.ids[pos])
        if mode == MASK_REPLACE:
            ids[pos] = MASK
        elif mode == RANDOM_REPLACE:
            ids[pos] = int(rng.integers(n_special, len(vocab)))
    return ids, targets


# ---------------------------------------------------------------------------
# image augmentation
# ---------------------------------------------------------------------------


def _affine_warp(px, angle_deg, shear_deg, rng):
    theta = np.deg2rad(angle_deg)
    shear = np.deg2rad(shear_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shr = np.array([[1.0, np.tan(shear)], [0.0, 1.0]])
    mat = rot @ shr
    center = (np.asarray(px.shape) - 1) / 2.0
    offset = center - mat @ center
    return affine_transform(px, mat, offset=offset, order=1, mode="constant", cval=0.0)


def _random_crop_resize(px, scale_range, rng):
    h, w = px.shape
    frac = rng.uniform(*scale_range)
    side = max(1, int(round(np.sqrt(frac) * h)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    patch = px[top : top + side, left : left + side]
    if side == h:
        return patch.copy()
    return zoom(patch, (h / side, w / side), order=1, grid_mode=True, mode="nearest")


def _occlude(px, scale_range, ratio_range, rng):
    h, w = px.shape
    area = rng.uniform(*scale_range) * h * w
    ratio = rng.uniform(*ratio_range)
    bh = max(1, min(h, int(round(np.sqrt(area * ratio)))))
    bw = max(1, min(w, int(round(np.sqrt(area / ratio)))))
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))
    out = px.copy()
    out[top : top + bh, left : left + bw] = 0.0
    return out


def _elastic(px, sigma, alpha, rng):
    h, w = px.shape
    dy = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    dx = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([ys + dy, xs + dx])
    return map_coordinates(px, coords, order=1, mode="reflect")


def image_augment(img: ImageRecord, params: AugmentParams, rng) -> ImageRecord:
    """Apply the stage's augmentations in the documented order."""
    params.validate()
    px = np.asarray(img.pixels, dtype=np.float64)

    angle = rng.uniform(-params.rotate_deg, params.rotate_deg)
    shear = rng.uniform(-params.shear_deg, params.shear_deg)
    if angle != 0.0 or shear != 0.0:
        px = _affine_warp(px, angle, shear, rng)

    if params.brightness:
        px = px * (1.0 + rng.uniform(-params.brightness, params.brightness))
    if params.contrast:
        factor = 1.0 + rng.uniform(-params.contrast, params.contrast)
        mean = px.mean()
        px = mean + (px - mean) * factor

    if params.hflip_prob is not None and rng.random() < params.hflip_prob:
        px = px[:, ::-1].copy()
    if params.crop_scale is not None:
        px = _random_crop_resize(px, params.crop_scale, rng)
    if params.occlusion_scale is not None:
        ratio = params.occlusion_ratio or (0.3, 3.3)
        px = _occlude(px, params.occlusion_scale, ratio, rng)
    if params.elastic_sigma_alpha is not None:
        prob = params.elastic_prob if params.elastic_prob is not None else 1.0
        if rng.random() < prob:
            sigma, alpha = params.elastic_sigma_alpha
            px = _elastic(px, sigma, alpha, rng)
    if params.gaussian_noise:
        px = px + rng.normal(0.0, params.gaussian_noise, px.shape)

    px = np.clip(px, 0.0, 1.0)
    return ImageRecord(id=img.id, pixels=px, source_size=img.source_size)


def scaled_augment_params(params: AugmentParams, factor: float) -> AugmentParams:
    """Uniformly scale geometric/photometric magnitudes (for desk-scale runs)."""
    return replace(
        params,
        shear_deg=params.shear_deg * factor,
        rotate_deg=params.rotate_deg * factor,
        brightness=params.brightness * factor,
        contrast=params.contrast * factor,
    )
