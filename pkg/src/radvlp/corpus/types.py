"""Core data records for paired image-report corpora."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FINDING_CATEGORIES = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "lung opacity",
    "pleural effusion",
    "pneumonia",
    "pneumothorax",
)

SPLITS = ("train", "val", "test")


@dataclass
class ReportDocument:
    """A sectioned report: ordered FINDINGS and IMPRESSION sentence lists."""

    id: str
    findings: list[str]
    impression: list[str]

    def validate(self):
        if not self.impression:
            raise ValueError(f"report {self.id!r}: impression section is empty")
        for s in self.findings + self.impression:
            if not isinstance(s, str) or not s.strip():
                raise ValueError(f"report {self.id!r}: blank sentence")

    def all_text(self) -> str:
        return " ".join(self.findings + self.impression)


@dataclass
class ImageRecord:
    """A square grayscale image with intensities in [0, 1]."""

    id: str
    pixels: np.ndarray
    source_size: tuple[int, int]

    def validate(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"image {self.id!r}: pixels must be 2-D")
        h, w = self.pixels.shape
        if h != w:
            raise ValueError(f"image {self.id!r}: expected square image, got {h}x{w}")
        lo, hi = float(self.pixels.min(initial=0.0)), float(self.pixels.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image {self.id!r}: intensities outside [0, 1] ({lo}, {hi})")


@dataclass
class PairedSample:
    image_id: str
    report_id: str
    split: str

    def validate(self):
        if self.split not in SPLITS:
            raise ValueError(f"pair ({self.image_id}, {self.report_id}): bad split {self.split!r}")


@dataclass
class GroundingAnnotation:
    """A phrase, its finding category, and one or more pixel-space boxes."""

    image_id: str
    phrase: str
    category: str
    boxes: list[tuple[int, int, int, int]]

    def validate(self):
        if not self.phrase.strip():
            raise ValueError(f"annotation for {self.image_id!r}: empty phrase")
        if self.category not in FINDING_CATEGORIES:
            raise ValueError(
                f"annotation for {self.image_id!r}: unknown category {self.category!r}"
            )
        if not self.boxes:
            raise ValueError(f"annotation for {self.image_id!r}: no boxes")


@dataclass
class ValidationVerdict:
    """Outcome of the curation-rule check for one annotation."""

    status: str  # accept | reject | needs_review
    rule_ids: list[int]
    message: str

    def __post_init__(self):
        if self.status not in ("accept", "reject", "needs_review"):
            raise ValueError(f"bad status {self.status!r}")
        if self.status == "reject" and not self.rule_ids:
            raise ValueError("reject verdict must name at least one rule")


@dataclass
class Dataset:
    """A fully cross-referenced corpus. Immutable by convention after load."""

    reports: dict[str, ReportDocument] = field(default_factory=dict)
    images: dict[str, ImageRecord] = field(default_factory=dict)
    pairs: list[PairedSample] = field(default_factory=list)
    annotations: list[GroundingAnnotation] = field(default_factory=list)

    def pairs_for_split(self, split: str) -> list[PairedSample]:
        return [p for p in self.pairs if p.split == split]

    def annotations_for_image(self, image_id: str) -> list[GroundingAnnotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    def sizes(self) -> tuple[int, int, int, int]:
        return (len(self.reports), len(self.images), len(self.pairs), len(self.annotations))

    def check_cross_references(self):
        """Raise if any id dangles or the splits leak into each other."""
        for p in self.pairs:
            if p.image_id not in self.images:
                raise ValueError(f"pair references unknown image_id {p.image_id!r}")
            if p.report_id not in self.reports:
                raise ValueError(f"pair references unknown report_id {p.report_id!r}")
        for a in self.annotations:
            if a.image_id not in self.images:
                raise ValueError(f"annotation references unknown image_id {a.image_id!r}")
            img = self.images[a.image_id]
            h, w = img.source_size
            for (x, y, bw, bh) in a.boxes:
                if x < 0 or y < 0 or x + bw > w or y + bh > h:
                    raise ValueError(
                        f"annotation box {(x, y, bw, bh)} outside image {a.image_id!r}"
                    )
        img_ids = {s: set() for s in SPLITS}
        rep_ids = {s: set() for s in SPLITS}
        for p in self.pairs:
            img_ids[p.split].add(p.image_id)
            rep_ids[p.split].add(p.report_id)
        for a in SPLITS:
            for b in SPLITS:
                if a >= b:
                    continue
                if img_ids[a] & img_ids[b]:
                    raise ValueError(f"image ids shared between {a} and {b} splits")
                if rep_ids[a] & rep_ids[b]:
                    raise ValueError(f"report ids shared between {a} and {b} splits")
