"""Manifest directory reader/writer.

A manifest is a directory with:

    reports.jsonl       {"id", "findings": [str], "impression": [str]}
    pairs.jsonl         {"image_id", "report_id", "split"}
    annotations.jsonl   {"image_id", "phrase", "category", "boxes": [[x,y,w,h],...]}
    images/             one <id>.npy (float array) or <id>.png per image

Coordinates are integers in source pixels, origin top-left.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .types import Dataset, GroundingAnnotation, ImageRecord, PairedSample, ReportDocument

REPORTS_FILE = "reports.jsonl"
PAIRS_FILE = "pairs.jsonl"
ANNOTATIONS_FILE = "annotations.jsonl"
IMAGES_DIR = "images"


class ManifestError(Exception):
    """Malformed manifest; message carries file and line when known."""


def _iter_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(
                    f"{path.name}:{lineno}: invalid JSON at column {exc.colno}"
                ) from exc


def _require(record, key, path, lineno):
    if key not in record:
        raise ManifestError(f"{path.name}:{lineno}: missing field {key!r}")
    return record[key]


def _load_image_file(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        arr = np.load(path)
        return np.asarray(arr, dtype=np.float64)
    if path.suffix == ".png":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        return arr / 255.0
    raise ManifestError(f"unsupported image format: {path.name}")


def load_manifest(root) -> Dataset:
    """Load and cross-check a manifest directory."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"manifest directory not found: {root}")
    for name in (REPORTS_FILE, PAIRS_FILE, ANNOTATIONS_FILE):
        if not (root / name).is_file():
            raise ManifestError(f"missing manifest file: {name}")
    img_dir = root / IMAGES_DIR
    if not img_dir.is_dir():
        raise ManifestError(f"missing manifest directory: {IMAGES_DIR}/")

    ds = Dataset()
    rpath = root / REPORTS_FILE
    for lineno, rec in _iter_jsonl(rpath):
        rid = _require(rec, "id", rpath, lineno)
        report = ReportDocument(
            id=rid,
            findings=list(_require(rec, "findings", rpath, lineno)),
            impression=list(_require(rec, "impression", rpath, lineno)),
        )
        try:
            report.validate()
        except ValueError as exc:
            raise ManifestError(f"{rpath.name}:{lineno}: {exc}") from exc
        if rid in ds.reports:
            raise ManifestError(f"{rpath.name}:{lineno}: duplicate report id {rid!r}")
        ds.reports[rid] = report

    for img_path in sorted(img_dir.iterdir()):
        if img_path.suffix not in (".npy", ".png"):
            continue
        iid = img_path.stem
        if iid in ds.images:
            raise ManifestError(f"duplicate image id {iid!r} in {IMAGES_DIR}/")
        pixels = _load_image_file(img_path)
        record = ImageRecord(id=iid, pixels=pixels, source_size=pixels.shape)
        try:
            record.validate()
        except ValueError as exc:
            raise ManifestError(f"{IMAGES_DIR}/{img_path.name}: {exc}") from exc
        ds.images[iid] = record

    ppath = root / PAIRS_FILE
    seen_pairs = set()
    for lineno, rec in _iter_jsonl(ppath):
        pair = PairedSample(
            image_id=_require(rec, "image_id", ppath, lineno),
            report_id=_require(rec, "report_id", ppath, lineno),
            split=_require(rec, "split", ppath, lineno),
        )
        try:
            pair.validate()
        except ValueError as exc:
            raise ManifestError(f"{ppath.name}:{lineno}: {exc}") from exc
        key = (pair.image_id, pair.report_id)
        if key in seen_pairs:
            raise ManifestError(f"{ppath.name}:{lineno}: duplicate pair {key}")
        seen_pairs.add(key)
        ds.pairs.append(pair)

    apath = root / ANNOTATIONS_FILE
    for lineno, rec in _iter_jsonl(apath):
        ann = GroundingAnnotation(
            image_id=_require(rec, "image_id", apath, lineno),
            phrase=_require(rec, "phrase", apath, lineno),
            category=_require(rec, "category", apath, lineno),
            boxes=[tuple(int(v) for v in box) for box in _require(rec, "boxes", apath, lineno)],
        )
        try:
            ann.validate()
        except ValueError as exc:
            raise ManifestError(f"{apath.name}:{lineno}: {exc}") from exc
        ds.annotations.append(ann)

    try:
        ds.check_cross_references()
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc
    return ds


def write_manifest(ds: Dataset, root) -> Path:
    """Write a dataset back out as a manifest directory (images as .npy)."""
    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    with open(root / REPORTS_FILE, "w", encoding="utf-8") as fh:
        for rid in sorted(ds.reports):
            r = ds.reports[rid]
            fh.write(json.dumps(
                {"id": r.id, "findings": r.findings, "impression": r.impression}
            ) + "\n")
    with open(root / PAIRS_FILE, "w", encoding="utf-8") as fh:
        for p in ds.pairs:
            fh.write(json.dumps(
                {"image_id": p.image_id, "report_id": p.report_id, "split": p.split}
            ) + "\n")
    with open(root / ANNOTATIONS_FILE, "w", encoding="utf-8") as fh:
        for a in ds.annotations:
            fh.write(json.dumps({
                "image_id": a.image_id,
                "phrase": a.phrase,
                "category": a.category,
                "boxes": [list(b) for b in a.boxes],
            }) + "\n")
    for iid in sorted(ds.images):
        np.save(root / IMAGES_DIR / f"{iid}.npy", ds.images[iid].pixels)
    return root
