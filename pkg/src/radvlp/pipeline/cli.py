"""Command-line interface.

Subcommands cover the full workflow: synthetic corpus generation, the four
training phases, and the evaluation harnesses. Every subcommand accepts
``--config`` (TOML or JSON), ``--seed``, and ``--out``; command-line values
override the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..corpus.generator import SynthConfig, generate_synthetic_corpus
from ..corpus.manifest import load_manifest, write_manifest
from .checkpoint import load_checkpoint
from .config import RunConfig, default_run_config, load_config
from .evaluate import (
    grounding_eval,
    prompt_sensitivity_report,
    segmentation_eval,
    zero_shot_eval,
)
from .train import run_phase


def _load_run_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_run_config(dataset="", out="runs/default")
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _add_common(p, dataset=True):
    p.add_argument("--config", default=None, help="TOML or JSON run config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    if dataset:
        p.add_argument("--dataset", default=None, help="manifest directory")


def _checkpoint_path(cfg: RunConfig, args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(cfg.out) / "joint" / "best.npz"


def _write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {path}")


def cmd_gen_synthetic(args):
    cfg = _load_run_config(args)
    syn = SynthConfig()
    if args.config:
        raw = Path(args.config).read_text()
        data = json.loads(raw) if args.config.endswith(".json") else None
        if data is None:
            try:
                import tomllib
            except ImportError:
                import tomli as tomllib
            data = tomllib.loads(raw)
        table = data.get("synthetic", {})
        if "categories" in table:
            table["categories"] = tuple(table["categories"])
        syn = SynthConfig(**table)
    if args.n_train is not None:
        syn.n_train = args.n_train
    if args.n_val is not None:
        syn.n_val = args.n_val
    if args.n_test is not None:
        syn.n_test = args.n_test
    if args.image_size is not None:
        syn.image_size = args.image_size
    if args.categories:
        syn.categories = tuple(args.categories)
    if args.normal_fraction is not None:
        syn.normal_fraction = args.normal_fraction
    out = args.out or cfg.dataset or "synthetic"
    ds = generate_synthetic_corpus(syn, seed=cfg.seed)
    write_manifest(ds, out)
    print(f"wrote manifest with sizes {ds.sizes()} to {out}")


def cmd_build_vocab(args):
    cfg = _load_run_config(args)
    run_phase(cfg, "vocab")


def cmd_pretrain_text(args):
    cfg = _load_run_config(args)
    phase = {"2": "text_phase2", "3": "text_phase3"}[args.phase]
    run_phase(cfg, phase)


def cmd_pretrain_image(args):
    cfg = _load_run_config(args)
    run_phase(cfg, "image_pretrain")


def cmd_train_joint(args):
    cfg = _load_run_config(args)
    run_phase(cfg, "joint")


def cmd_eval_zeroshot(args):
    cfg = _load_run_config(args)
    ckpt = load_checkpoint(_checkpoint_path(cfg, args))
    ds = load_manifest(cfg.dataset)
    out_dir = Path(cfg.out) / "eval"
    if args.prompt_file:
        from ..inference import embed_prompts, zero_shot_probs
        from .evaluate import embed_images_global

        prompts = [l for l in Path(args.prompt_file).read_text().splitlines() if l.strip()]
        ps = embed_prompts(ckpt.bundle, prompts)
        pairs = ds.pairs_for_split(args.split)
        images = [ds.images[p.image_id] for p in pairs]
        v = embed_images_global(ckpt.bundle, images)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "zeroshot_probs.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "argmax"] + [f"p{c}" for c in range(len(prompts))])
            for p, vi in zip(pairs, v):
                probs = zero_shot_probs(vi, ps)
                w.writerow([p.image_id, int(np.argmax(probs))] + [f"{x:.6f}" for x in probs])
        print(f"wrote {path}")
        return
    result = zero_shot_eval(ckpt.bundle, ds, args.category, args.pos_prompt,
                            args.neg_prompt, split=args.split)
    _write_json(out_dir / "zeroshot.json", result)
    print(json.dumps(result, indent=2))


def cmd_eval_grounding(args):
    cfg = _load_run_config(args)
    ckpt = load_checkpoint(_checkpoint_path(cfg, args))
    ds = load_manifest(cfg.dataset)
    result = grounding_eval(ckpt.bundle, ds, split=args.split, rescale=args.rescale)
    out_dir = Path(cfg.out) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = result.pop("samples")
    csv_path = out_dir / "grounding_samples.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["image_id", "category", "phrase",
                                           "cnr", "miou", "dice"])
        w.writeheader()
        w.writerows(samples)
    _write_json(out_dir / "grounding.json", result)
    if args.save_maps:
        _export_maps(ckpt.bundle, ds, samples, Path(args.save_maps), args.save_png)
    print(json.dumps(result["macro"], indent=2))


def _export_maps(bundle, ds, samples, out_dir: Path, save_png: bool):
    from ..inference import similarity_map

    out_dir.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(samples):
        img = ds.images[row["image_id"]]
        sm = similarity_map(bundle, img, row["phrase"])
        np.save(out_dir / f"map_{i:04d}.npy", sm.cells)
        if save_png:
            _save_overlay(img.pixels, sm.cells, out_dir / f"map_{i:04d}.png")


def _save_overlay(pixels, cells, path):
    """Red heatmap overlay: similarity in [-1,1] upscaled to image size."""
    from PIL import Image

    h, w = pixels.shape
    heat = np.clip((cells + 1.0) / 2.0, 0.0, 1.0)
    heat = np.kron(heat, np.ones((h // cells.shape[0], w // cells.shape[1])))
    base = (np.clip(pixels, 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([base, base, base], axis=-1).astype(np.float64)
    rgb[..., 0] = np.clip(rgb[..., 0] * (1 - 0.5 * heat) + 255 * 0.5 * heat, 0, 255)
    Image.fromarray(rgb.astype(np.uint8)).save(path)


def cmd_eval_segmentation(args):
    cfg = _load_run_config(args)
    ckpt = load_checkpoint(_checkpoint_path(cfg, args))
    ds = load_manifest(cfg.dataset)
    result = segmentation_eval(ckpt.bundle, ds, args.category, args.pos_prompt,
                               split=args.split)
    _write_json(Path(cfg.out) / "eval" / "segmentation.json", result)
    print(json.dumps(result, indent=2))


def cmd_prompt_sensitivity(args):
    cfg = _load_run_config(args)
    ckpt = load_checkpoint(_checkpoint_path(cfg, args))
    ds = load_manifest(cfg.dataset)
    pairs = []
    for line in Path(args.prompts).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if "|" not in line:
            raise SystemExit(f"prompt line needs 'positive | negative': {line!r}")
        pos, neg = (part.strip() for part in line.split("|", 1))
        pairs.append((pos, neg))
    rows = prompt_sensitivity_report(ckpt.bundle, pairs, ds, args.category,
                                     split=args.split)
    _write_json(Path(cfg.out) / "eval" / "prompt_sensitivity.json", rows)
    print(f"{'F1':>8} {'ROC-AUC':>8} {'|dAUC|':>8}  prompts")
    for r in rows:
        print(f"{r['f1']:8.3f} {r['auroc']:8.3f} {r['delta_auc']:8.3f}  "
              f"{r['pos_prompt']!r} vs {r['neg_prompt']!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radvlp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic paired corpus")
    _add_common(p, dataset=False)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--categories", nargs="+", default=None)
    p.add_argument("--normal-fraction", type=float, default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", help="induce the WordPiece vocabulary")
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain-text", help="text pretraining (phase 2 or 3)")
    _add_common(p)
    p.add_argument("--phase", choices=["2", "3"], required=True)
    p.set_defaults(func=cmd_pretrain_text)

    p = sub.add_parser("pretrain-image", help="image-only contrastive pretraining")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_image)

    p = sub.add_parser("train-joint", help="joint image-text training")
    _add_common(p)
    p.set_defaults(func=cmd_train_joint)

    p = sub.add_parser("eval-zeroshot", help="zero-shot classification")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--category", default="pneumonia")
    p.add_argument("--pos-prompt", default="findings suggesting pneumonia")
    p.add_argument("--neg-prompt", default="no evidence of pneumonia")
    p.add_argument("--prompt-file", default=None,
                   help="multi-class: one prompt per line, line order = class id")
    p.set_defaults(func=cmd_eval_zeroshot)

    p = sub.add_parser("eval-grounding", help="phrase grounding metrics")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--rescale", action="store_true",
                   help="min-max rescale similarity maps before thresholding")
    p.add_argument("--save-maps", default=None, help="directory for NPY similarity maps")
    p.add_argument("--save-png", action="store_true", help="also write PNG overlays")
    p.set_defaults(func=cmd_eval_grounding)

    p = sub.add_parser("eval-segmentation", help="prompt-driven segmentation")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--category", default="pneumonia")
    p.add_argument("--pos-prompt", default="findings suggesting pneumonia")
    p.set_defaults(func=cmd_eval_segmentation)

    p = sub.add_parser("prompt-sensitivity", help="zero-shot prompt sensitivity table")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--category", default="pneumonia")
    p.add_argument("--prompts", required=True,
                   help="file of 'positive | negative' prompt pairs, one per line")
    p.set_defaults(func=cmd_prompt_sensitivity)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
