"""Batched evaluation harnesses: zero-shot classification, phrase grounding,
prompt-driven segmentation, and the prompt-sensitivity report."""

from __future__ import annotations

import numpy as np

from .. import nn
from ..corpus.types import Dataset
from ..inference import PromptSet, embed_prompts, zero_shot_probs
from ..metrics import (
    auroc,
    classification_metrics,
    cnr,
    dice,
    grounding_score,
    minmax_rescale,
    miou,
    rasterize_boxes,
)
from ..models import ModelBundle


def embed_images_global(bundle: ModelBundle, images, batch_size: int = 32) -> np.ndarray:
    """Global joint-space embeddings for a list of images, batched."""
    out = []
    for i in range(0, len(images), batch_size):
        x = np.stack(
            [np.asarray(im.pixels, dtype=nn.DTYPE) for im in images[i : i + batch_size]]
        )[..., None]
        grid, _ = bundle.image.forward_batch(x)
        b, h, w, c = grid.shape
        z, _ = bundle.iproj.forward(grid.reshape(b, h * w, c))
        out.append(nn.normalize_rows(z.mean(axis=1)))
    return np.concatenate(out, axis=0)


def projected_grids(bundle: ModelBundle, images, batch_size: int = 32) -> np.ndarray:
    """Per-cell unit-norm projected grids (N, h, w, proj_dim), batched."""
    out = []
    for i in range(0, len(images), batch_size):
        x = np.stack(
            [np.asarray(im.pixels, dtype=nn.DTYPE) for im in images[i : i + batch_size]]
        )[..., None]
        grid, _ = bundle.image.forward_batch(x)
        z, _ = bundle.iproj.forward(grid)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        out.append(z / norms)
    return np.concatenate(out, axis=0)


def split_images_with_labels(ds: Dataset, category: str, split: str = "test"):
    """Images of a split and a has-category label derived from annotations."""
    pairs = ds.pairs_for_split(split)
    annotated = {a.image_id for a in ds.annotations if a.category == category}
    images = [ds.images[p.image_id] for p in pairs]
    labels = np.array([p.image_id in annotated for p in pairs], dtype=bool)
    return images, labels


def zero_shot_eval(bundle: ModelBundle, ds: Dataset, category: str,
                   pos_prompt: str, neg_prompt: str, split: str = "test") -> dict:
    """Binary zero-shot classification of one finding category.

    Reports argmax accuracy (class 0 = positive prompt) plus the thresholded
    metric set computed on the positive-class probability.
    """
    images, labels = split_images_with_labels(ds, category, split)
    ps = embed_prompts(bundle, [pos_prompt, neg_prompt])
    v = embed_images_global(bundle, images)
    probs = np.stack([zero_shot_probs(vi, ps) for vi in v])
    pred_pos = probs[:, 0] > probs[:, 1]
    result = {
        "n": len(images),
        "category": category,
        "argmax_accuracy": float((pred_pos == labels).mean()),
    }
    result.update(classification_metrics(probs[:, 0], labels))
    return result


def grounding_eval(bundle: ModelBundle, ds: Dataset, split: str = "test",
                   rescale: bool = False) -> dict:
    """CNR/mIoU/Dice per annotation, aggregated per category and macro-averaged."""
    split_ids = {p.image_id for p in ds.pairs_for_split(split)}
    anns = [a for a in ds.annotations if a.image_id in split_ids]
    if not anns:
        raise ValueError(f"no annotations in split {split!r}")
    images = [ds.images[a.image_id] for a in anns]
    grids = projected_grids(bundle, images)
    rows = []
    for a, img, grid in zip(anns, images, grids):
        t = bundle.embed_text(a.phrase)
        sim = grid @ t
        if rescale:
            sim = minmax_rescale(sim)
        mask = rasterize_boxes(a.boxes, img.source_size, sim.shape)
        if not mask.cells.any() or mask.cells.all():
            continue
        score = grounding_score(sim, mask)
        rows.append({
            "image_id": a.image_id,
            "category": a.category,
            "phrase": a.phrase,
            "cnr": score.cnr,
            "miou": score.miou,
            "dice": score.dice,
        })
    by_cat: dict[str, list] = {}
    for r in rows:
        by_cat.setdefault(r["category"], []).append(r)
    per_category = {
        cat: {
            "n": len(rs),
            "cnr": float(np.mean([r["cnr"] for r in rs])),
            "miou": float(np.mean([r["miou"] for r in rs])),
            "dice": float(np.mean([r["dice"] for r in rs])),
        }
        for cat, rs in sorted(by_cat.items())
    }
    macro = {
        k: float(np.mean([c[k] for c in per_category.values()]))
        for k in ("cnr", "miou", "dice")
    }
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("cnr", "miou", "dice")}
    return {"per_category": per_category, "macro": macro, "mean": mean, "samples": rows}


def segmentation_eval(bundle: ModelBundle, ds: Dataset, category: str,
                      pos_prompt: str, split: str = "test") -> dict:
    """Prompt-driven zero-shot segmentation against the category's boxes."""
    split_ids = {p.image_id for p in ds.pairs_for_split(split)}
    anns = [a for a in ds.annotations if a.image_id in split_ids and a.category == category]
    if not anns:
        raise ValueError(f"no {category!r} annotations in split {split!r}")
    t = bundle.embed_text(pos_prompt)
    images = [ds.images[a.image_id] for a in anns]
    grids = projected_grids(bundle, images)
    ious, dices, cnrs = [], [], []
    for a, img, grid in zip(anns, images, grids):
        sim = grid @ t
        mask = rasterize_boxes(a.boxes, img.source_size, sim.shape)
        if not mask.cells.any() or mask.cells.all():
            continue
        scaled = (sim + 1.0) / 2.0
        pred = scaled > 0.6
        union = np.logical_or(pred, mask.cells).sum()
        ious.append(np.logical_and(pred, mask.cells).sum() / union if union else 0.0)
        dices.append(dice(sim, mask))
        cnrs.append(cnr(sim, mask))
    return {
        "n": len(ious),
        "category": category,
        "iou": float(np.mean(ious)),
        "dice": float(np.mean(dices)),
        "cnr": float(np.mean(cnrs)),
    }


def prompt_sensitivity_report(bundle: ModelBundle, prompt_pairs, ds: Dataset,
                              category: str, split: str = "test") -> list[dict]:
    """Zero-shot metrics per (positive, negative) prompt pair.

    |dAUC| is reported relative to the first pair. Raises when the eval set
    has a single class (AUROC undefined).
    """
    prompt_pairs = list(prompt_pairs)
    if len(prompt_pairs) < 2:
        raise ValueError("need at least 2 prompt pairs to compare")
    images, labels = split_images_with_labels(ds, category, split)
    if labels.all() or not labels.any():
        raise ValueError("prompt sensitivity needs both classes in the eval set")
    v = embed_images_global(bundle, images)
    rows = []
    base_auc = None
    for pos, neg in prompt_pairs:
        ps = embed_prompts(bundle, [pos, neg])
        scores = np.array([zero_shot_probs(vi, ps)[0] for vi in v])
        m = classification_metrics(scores, labels)
        auc = m["auroc"]
        if base_auc is None:
            base_auc = auc
        rows.append({
            "pos_prompt": pos,
            "neg_prompt": neg,
            "f1": m["f1"],
            "auroc": auc,
            "delta_auc": abs(auc - base_auc),
        })
    return rows
