"""Synthetic paired image-report corpus.

Each image is a noisy grayscale canvas; abnormal images carry one or more
bright geometric findings, one distinct shape family per finding category,
placed in a named quadrant. Reports describe the placed findings with a
location modifier drawn from a small template grammar and explicitly negate
the absent categories, mirroring how often real reports state absence. The
generator also emits a tight ground-truth box per placed finding, so the
corpus doubles as a phrase-grounding benchmark.

Everything is a pure function of (config, seed): two runs with equal inputs
produce byte-identical manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .types import (
    Dataset,
    FINDING_CATEGORIES,
    GroundingAnnotation,
    ImageRecord,
    PairedSample,
    ReportDocument,
)

REGIONS = ("left upper zone", "right upper zone", "left lower zone", "right lower zone")

SIZE_WORDS = ("small", "moderate", "large")

FINDING_TEMPLATES = (
    "there is a {size} {cat} in the {region}.",
    "a {size} {cat} is seen in the {region}.",
    "{size} {cat} noted in the {region}.",
)

NEGATION_TEMPLATES = (
    "there is no {cat}.",
    "no evidence of {cat}.",
    "no {cat} is identified.",
)

IMPRESSION_POSITIVE_TEMPLATES = (
    "findings suggesting {cat} in the {region}.",
    "consistent with {cat} in the {region}.",
    "{cat} in the {region}.",
)

IMPRESSION_NORMAL_TEMPLATES = (
    "no acute findings.",
    "clear scan without acute findings.",
    "unremarkable study.",
)


@dataclass
class SynthConfig:
    categories: tuple[str, ...] = ("pneumonia", "pneumothorax")
    n_train: int = 512
    n_val: int = 64
    n_test: int = 128
    image_size: int = 64
    normal_fraction: float = 0.5
    max_findings: int = 2

    def validate(self):
        if len(self.categories) < 2:
            raise ValueError("config must name at least 2 finding categories")
        for c in self.categories:
            if c not in FINDING_CATEGORIES:
                raise ValueError(f"unknown finding category {c!r}")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("duplicate categories")
        if self.image_size < 32 or self.image_size % 16 != 0:
            raise ValueError(
                f"image_size {self.image_size} too small for the 2x2 region grid "
                "(needs >= 32 and a multiple of 16)"
            )
        if not 0.0 <= self.normal_fraction <= 1.0:
            raise ValueError("normal_fraction must be in [0, 1]")
        if self.max_findings < 1 or self.max_findings > len(REGIONS):
            raise ValueError(f"max_findings must be in [1, {len(REGIONS)}]")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")


# ---------------------------------------------------------------------------
# shape rendering: one distinct silhouette per finding category
# ---------------------------------------------------------------------------


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size]
    return ys, xs


def _shape_mask(category, size, cy, cx, r, rng):
    ys, xs = _grid(size)
    dy, dx = ys - cy, xs - cx
    if category == "cardiomegaly":
        return (dx / r) ** 2 + (dy / (0.7 * r)) ** 2 <= 1.0
    if category == "lung opacity":
        return dx * dx + dy * dy <= r * r
    if category == "consolidation":
        return (np.abs(dx) <= r) & (np.abs(dy) <= 0.8 * r)
    if category == "edema":
        return np.abs(dx) + np.abs(dy) <= r
    if category == "atelectasis":
        return (np.abs(dx) <= r) & (np.abs(dy) <= max(2, r // 3))
    if category == "pleural effusion":
        return (np.abs(dx) <= r) & (dy >= -0.2 * r) & (dy <= r) & (dy >= np.abs(dx) - 0.6 * r)
    if category == "pneumonia":
        d = np.sqrt(dx * dx + dy * dy)
        arm = max(2, r // 3)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= r)
        )
    if category == "pneumothorax":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    raise ValueError(f"no shape defined for category {category!r}")


def _region_bounds(region, size):
    half = size // 2
    row = 0 if "upper" in region else half
    col = 0 if region.startswith("left") else half
    return row, col, half


def _render_background(size, rng):
    ys, _ = _grid(size)
    base = 0.18 + 0.10 * (ys / max(1, size - 1))
    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=3.0) * 0.06
    grain = rng.normal(0.0, 0.03, size=(size, size))
    return base + texture + grain


def _place_finding(canvas, category, region, rng):
    """Draw one finding; returns (tight box, size word)."""
    size = canvas.shape[0]
    row0, col0, half = _region_bounds(region, size)
    r_lo, r_hi = max(4, half // 4), half // 2 - 2
    r = int(rng.integers(r_lo, r_hi + 1))
    margin = r + 1
    cy = int(rng.integers(row0 + margin, row0 + half - margin + 1))
    cx = int(rng.integers(col0 + margin, col0 + half - margin + 1))
    mask = _shape_mask(category, size, cy, cx, r, rng)
    level = 0.72 + 0.18 * rng.random()
    canvas[mask] = level + rng.normal(0.0, 0.02, size=int(mask.sum()))
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
    thirds = (r_hi - r_lo) / 3.0
    size_word = SIZE_WORDS[min(2, int((r - r_lo) / max(thirds, 1e-9)))]
    return box, size_word


def _pick(rng, options):
    return options[int(rng.integers(0, len(options)))]


def _make_sample(index, split, abnormal, cfg: SynthConfig, rng):
    image_id = f"img-{index:05d}"
    report_id = f"rep-{index:05d}"
    canvas = _render_background(cfg.image_size, rng)

    findings_sents: list[str] = []
    impression_sents: list[str] = []
    annotations: list[GroundingAnnotation] = []
    present: list[str] = []

    if abnormal:
        k = int(rng.integers(1, cfg.max_findings + 1))
        k = min(k, len(cfg.categories))
        cat_idx = rng.choice(len(cfg.categories), size=k, replace=False)
        reg_idx = rng.choice(len(REGIONS), size=k, replace=False)
        for ci, ri in zip(cat_idx, reg_idx):
            cat = cfg.categories[int(ci)]
            region = REGIONS[int(ri)]
            box, size_word = _place_finding(canvas, cat, region, rng)
            sent = _pick(rng, FINDING_TEMPLATES).format(size=size_word, cat=cat, region=region)
            findings_sents.append(sent)
            impression_sents.append(
                _pick(rng, IMPRESSION_POSITIVE_TEMPLATES).format(cat=cat, region=region)
            )
            annotations.append(
                GroundingAnnotation(
                    image_id=image_id,
                    phrase=sent.rstrip("."),
                    category=cat,
                    boxes=[box],
                )
            )
            present.append(cat)

    for cat in cfg.categories:
        if cat not in present:
            findings_sents.append(_pick(rng, NEGATION_TEMPLATES).format(cat=cat))
    if not present:
        impression_sents.append(_pick(rng, IMPRESSION_NORMAL_TEMPLATES))

    pixels = np.clip(canvas, 0.0, 1.0)
    image = ImageRecord(id=image_id, pixels=pixels, source_size=pixels.shape)
    report = ReportDocument(id=report_id, findings=findings_sents, impression=impression_sents)
    pair = PairedSample(image_id=image_id, report_id=report_id, split=split)
    return image, report, pair, annotations


def generate_synthetic_corpus(cfg: SynthConfig, seed: int) -> Dataset:
    """Generate a deterministic paired corpus with grounding ground truth."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    ds = Dataset()
    index = 0
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        n_normal = int(round(cfg.normal_fraction * n))
        statuses = np.array([False] * n_normal + [True] * (n - n_normal))
        rng.shuffle(statuses)
        for abnormal in statuses:
            image, report, pair, anns = _make_sample(index, split, bool(abnormal), cfg, rng)
            ds.images[image.id] = image
            ds.reports[report.id] = report
            ds.pairs.append(pair)
            ds.annotations.extend(anns)
            index += 1
    ds.check_cross_references()
    return ds
