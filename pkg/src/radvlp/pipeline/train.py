"""Phase orchestration: vocabulary, text pretraining (MLM, then MLM plus
section matching), image-only contrastive pretraining, and joint training.

Each phase consumes the checkpoints of its prerequisites, streams per-step
loss components to ``log.csv``, tracks a validation loss for early stopping
(no labels are ever read on that path), and writes ``best.npz``/``last.npz``
under ``<out>/<phase>/``. Single-worker and fully seeded: two runs with the
same config and seed produce identical traces and checkpoints.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .. import nn
from ..augment import (
    AugmentParams,
    apply_mask_plan,
    image_augment,
    image_only_augment_params,
    joint_augment_params,
    sample_whole_word_mask,
    scaled_augment_params,
    shuffle_sentences,
)
from ..corpus.manifest import load_manifest
from ..corpus.types import Dataset, ImageRecord, ReportDocument
from ..models import ModelBundle, ModelConfig, build_bundle
from ..objectives import (
    LossValue,
    global_alignment_loss_grad,
    mlm_loss_grad,
    rsm_loss_grad,
    simclr_loss_grad,
)
from ..text.encoder import TextEncoderConfig, prepare_sequence
from ..text.vocab import PAD, Vocabulary, build_vocab, tokenize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import CONTRASTIVE_PHASES, PHASES, RunConfig

VOCAB_FILE = "vocab.txt"
LOG_COLUMNS = ("phase", "epoch", "step", "split", "loss", "mlm", "rsm", "ga", "simclr")

TRAINED_COMPONENTS = {
    "text_phase2": ("text", "mlm"),
    "text_phase3": ("text", "mlm", "tproj"),
    "image_pretrain": ("image", "iproj"),
    "joint": ("text", "mlm", "tproj", "image", "iproj"),
}


class MissingPrerequisiteError(RuntimeError):
    pass


def _phase_dir(cfg: RunConfig, phase: str) -> Path:
    return Path(cfg.out) / phase


def _stream_seeds(seed: int, phase: str, n: int):
    ss = np.random.SeedSequence([seed, PHASES.index(phase)])
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def _require_file(path: Path, needed_by: str, hint: str):
    if not path.is_file():
        raise MissingPrerequisiteError(
            f"{needed_by} requires {path} ({hint}); run the earlier phase first"
        )


# ---------------------------------------------------------------------------
# vocabulary phase
# ---------------------------------------------------------------------------


def build_vocabulary_phase(cfg: RunConfig, ds: Dataset) -> Vocabulary:
    """Phase I: induce the vocabulary from the train-split reports."""
    train_ids = {p.report_id for p in ds.pairs_for_split("train")}
    corpus = [ds.reports[rid].all_text() for rid in sorted(train_ids)]
    if not corpus:
        raise ValueError("no train-split reports to build a vocabulary from")
    vocab = build_vocab(corpus, cfg.vocab_size)
    out = _phase_dir(cfg, "vocab")
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILE)
    return vocab


def _load_vocab(cfg: RunConfig, needed_by: str) -> Vocabulary:
    path = _phase_dir(cfg, "vocab") / VOCAB_FILE
    _require_file(path, needed_by, "vocabulary file")
    return Vocabulary.load(path)


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------


def _report_text(report: ReportDocument, section: str) -> str:
    if section == "findings":
        return " ".join(report.findings)
    if section == "impression":
        return " ".join(report.impression)
    return report.all_text()


def _masked_batch(texts, vocab: Vocabulary, mask_rng, rate: float):
    """Tokenize, wrap with specials, mask whole words, and pad a text batch.

    Returns (ids, key_mask, rows, cols, targets): the corrupted id matrix,
    the pad mask, and the masked positions with their original ids.
    """
    seqs = [prepare_sequence(tokenize(t, vocab)) for t in texts]
    corrupted, rows, cols, targets = [], [], [], []
    for i, seq in enumerate(seqs):
        plan = sample_whole_word_mask(seq, vocab, mask_rng, rate)
        ids, tg = apply_mask_plan(seq, plan, vocab, mask_rng)
        corrupted.append(ids)
        rows.extend([i] * len(plan.positions))
        cols.extend(plan.positions)
        targets.extend(tg)
    t_max = max(len(ids) for ids in corrupted)
    batch = np.full((len(corrupted), t_max), PAD, dtype=np.int64)
    key_mask = np.zeros((len(corrupted), t_max), dtype=bool)
    for i, ids in enumerate(corrupted):
        batch[i, : len(ids)] = ids
        key_mask[i, : len(ids)] = True
    return batch, key_mask, np.asarray(rows), np.asarray(cols), np.asarray(targets)


def _image_batch(images) -> np.ndarray:
    return np.stack([np.asarray(im.pixels, dtype=nn.DTYPE) for im in images])[..., None]


def _epoch_batches(n, batch_size, order_rng, drop_last=True):
    order = order_rng.permutation(n)
    end = (n // batch_size) * batch_size if drop_last else n
    for i in range(0, end, batch_size):
        chunk = order[i : i + batch_size]
        if len(chunk) > 0:
            yield chunk


# ---------------------------------------------------------------------------
# forward/backward blocks shared by phases
# ---------------------------------------------------------------------------


def _text_forward(bundle, ids, key_mask, rows, cols, train, rng):
    feats, cache = bundle.text.forward_batch(ids, key_mask, train=train, rng=rng)
    sel = feats[rows, cols]
    logits, mlm_cache = bundle.mlm.forward(sel)
    return feats, cache, logits, mlm_cache


def _text_backward(bundle, cache, mlm_cache, dlogits, rows, cols, feats_shape, dcls=None):
    dfeat = np.zeros(feats_shape)
    if dlogits is not None:
        dsel = bundle.mlm.backward(dlogits, mlm_cache)
        np.add.at(dfeat, (rows, cols), dsel)
    if dcls is not None:
        dfeat[:, 0] += dcls
    bundle.text.backward_batch(dfeat, cache)


def _project_cls(bundle, feats):
    cls = feats[:, 0]
    z, cache = bundle.tproj.forward(cls)
    return nn.normalize_rows(z), z, cache


def _project_cls_backward(bundle, dt, z, cache):
    dz = nn.normalize_rows_grad(z, dt)
    return bundle.tproj.backward(dz, cache)


def _image_global_forward(bundle, x):
    grid, cache = bundle.image.forward_batch(x)
    b, h, w, c = grid.shape
    z, pcache = bundle.iproj.forward(grid.reshape(b, h * w, c))
    mean = z.mean(axis=1)
    v = nn.normalize_rows(mean)
    return v, (grid.shape, cache, z, pcache, mean)


def _image_global_backward(bundle, dv, state):
    grid_shape, cache, z, pcache, mean = state
    b, h, w, c = grid_shape
    dmean = nn.normalize_rows_grad(mean, dv)
    dz = np.repeat(dmean[:, None, :], h * w, axis=1) / (h * w)
    dflat = bundle.iproj.backward(dz, pcache)
    bundle.image.backward_batch(dflat.reshape(grid_shape), cache)


# ---------------------------------------------------------------------------
# per-phase step and validation functions
# ---------------------------------------------------------------------------


def _phase2_step(bundle, reports, vocab, rngs, rate, train=True):
    texts = []
    for r in reports:
        r = shuffle_sentences(r, rngs["text_aug"]) if train else r
        texts.append(_report_text(r, "all"))
    ids, key_mask, rows, cols, targets = _masked_batch(texts, vocab, rngs["mask"], rate)
    feats, cache, logits, mlm_cache = _text_forward(
        bundle, ids, key_mask, rows, cols, train, rngs.get("dropout")
    )
    loss, dlogits = mlm_loss_grad(logits, targets)
    if train:
        _text_backward(bundle, cache, mlm_cache, dlogits, rows, cols, feats.shape)
    return LossValue(scalar=loss.scalar, components={"mlm": loss.scalar})


def _phase3_step(bundle, reports, vocab, rngs, rate, temps, train=True):
    f_texts, i_texts = [], []
    for r in reports:
        r = shuffle_sentences(r, rngs["text_aug"]) if train else r
        f_texts.append(_report_text(r, "findings"))
        i_texts.append(_report_text(r, "impression"))
    n = len(reports)
    ids, key_mask, rows, cols, targets = _masked_batch(
        f_texts + i_texts, vocab, rngs["mask"], rate
    )
    feats, cache, logits, mlm_cache = _text_forward(
        bundle, ids, key_mask, rows, cols, train, rngs.get("dropout")
    )
    t_all, z, pcache = _project_cls(bundle, feats)
    t_f, t_i = t_all[:n], t_all[n:]
    rsm, gf, gi = rsm_loss_grad(t_f, t_i, temps.tau1)
    mlm, dlogits = mlm_loss_grad(logits, targets)
    scalar = rsm.scalar + temps.lambda_mlm * mlm.scalar
    if train:
        dt = np.concatenate([gf, gi], axis=0)
        dcls = _project_cls_backward(bundle, dt, z, pcache)
        _text_backward(
            bundle, cache, mlm_cache, temps.lambda_mlm * dlogits, rows, cols,
            feats.shape, dcls=dcls,
        )
    return LossValue(scalar=scalar, components={"rsm": rsm.scalar, "mlm": mlm.scalar})


def _simclr_step(bundle, images, params: AugmentParams, rngs, tau, train=True):
    views = []
    for im in images:
        views.append(image_augment(im, params, rngs["image_aug"]))
        views.append(image_augment(im, params, rngs["image_aug"]))
    x = _image_batch(views)
    z, state = _image_global_forward(bundle, x)
    loss, dz = simclr_loss_grad(z, tau)
    if train:
        _image_global_backward(bundle, dz, state)
    return LossValue(scalar=loss.scalar, components={"simclr": loss.scalar})


def _joint_step(bundle, images, reports, vocab, params, rngs, rate, temps, train=True):
    i_texts = []
    for r in reports:
        r = shuffle_sentences(r, rngs["text_aug"]) if train else r
        i_texts.append(_report_text(r, "impression"))
    ids, key_mask, rows, cols, targets = _masked_batch(i_texts, vocab, rngs["mask"], rate)
    feats, cache, logits, mlm_cache = _text_forward(
        bundle, ids, key_mask, rows, cols, train, rngs.get("dropout")
    )
    t_i, z, pcache = _project_cls(bundle, feats)

    imgs = [image_augment(im, params, rngs["image_aug"]) if train else im for im in images]
    x = _image_batch(imgs)
    v, istate = _image_global_forward(bundle, x)

    ga, gv, gt = global_alignment_loss_grad(v, t_i, temps.tau2)
    mlm, dlogits = mlm_loss_grad(logits, targets)
    scalar = temps.lambda_ga * ga.scalar + mlm.scalar
    if train:
        _image_global_backward(bundle, temps.lambda_ga * gv, istate)
        dcls = _project_cls_backward(bundle, temps.lambda_ga * gt, z, pcache)
        _text_backward(bundle, cache, mlm_cache, dlogits, rows, cols, feats.shape, dcls=dcls)
    return LossValue(scalar=scalar, components={"ga": ga.scalar, "mlm": mlm.scalar})


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def _make_bundle_for_phase(cfg: RunConfig, phase: str, vocab: Vocabulary) -> ModelBundle:
    text_cfg = cfg.text or TextEncoderConfig(vocab_size=len(vocab))
    if text_cfg.vocab_size != len(vocab):
        text_cfg = TextEncoderConfig(**{**text_cfg.__dict__, "vocab_size": len(vocab)})
    init_seed = int(np.random.SeedSequence([cfg.seed, PHASES.index(phase), 777]).generate_state(1)[0])
    return ModelBundle(vocab, ModelConfig(text=text_cfg, image=cfg.image), seed=init_seed)


def _load_prerequisites(cfg: RunConfig, phase: str, bundle: ModelBundle):
    if phase == "text_phase3":
        path = _phase_dir(cfg, "text_phase2") / "best.npz"
        _require_file(path, "text_phase3", "phase-2 text weights")
        prev = load_checkpoint(path)
        bundle.load_state_dict(prev.bundle.state_dict(), components=("text", "mlm"))
    elif phase == "joint":
        tpath = _phase_dir(cfg, "text_phase3") / "best.npz"
        ipath = _phase_dir(cfg, "image_pretrain") / "best.npz"
        _require_file(tpath, "joint", "phase-3 text weights")
        _require_file(ipath, "joint", "pretrained image weights")
        tprev = load_checkpoint(tpath)
        iprev = load_checkpoint(ipath)
        bundle.load_state_dict(tprev.bundle.state_dict(), components=("text", "mlm", "tproj"))
        bundle.load_state_dict(iprev.bundle.state_dict(), components=("image", "iproj"))


def run_phase(cfg: RunConfig, phase: str, dataset: Dataset | None = None) -> Checkpoint:
    """Run one phase end to end and return the best checkpoint."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    ds = dataset if dataset is not None else load_manifest(cfg.dataset)

    if phase == "vocab":
        vocab = build_vocabulary_phase(cfg, ds)
        bundle = _make_bundle_for_phase(cfg, phase, vocab)
        ckpt = Checkpoint(phase=phase, epoch=0, best_val_loss=float("nan"), bundle=bundle)
        save_checkpoint(_phase_dir(cfg, phase) / "best.npz", ckpt)
        return ckpt

    vocab = _load_vocab(cfg, phase)
    bundle = _make_bundle_for_phase(cfg, phase, vocab)
    _load_prerequisites(cfg, phase, bundle)

    pcfg = cfg.phase_config(phase)
    pcfg.optimizer.validate(contrastive=phase in CONTRASTIVE_PHASES)
    if pcfg.epochs < 1:
        raise ValueError("epochs must be >= 1")

    train_pairs = ds.pairs_for_split("train")
    val_pairs = ds.pairs_for_split("val")
    if not train_pairs:
        raise ValueError("dataset has no train pairs")

    rng_list = _stream_seeds(cfg.seed, phase, 5)
    rngs = dict(zip(("order", "text_aug", "mask", "image_aug", "dropout"), rng_list))
    val_seed = int(np.random.SeedSequence([cfg.seed, PHASES.index(phase), 99]).generate_state(1)[0])

    components = TRAINED_COMPONENTS[phase]
    params = [(n, p) for n, p in bundle.named_params(components)]
    batch_size = pcfg.optimizer.batch_size
    steps_per_epoch = max(1, len(train_pairs) // batch_size)
    opt = nn.AdamW(
        params,
        lr=pcfg.optimizer.lr,
        weight_decay=pcfg.optimizer.weight_decay,
        total_steps=pcfg.epochs * steps_per_epoch,
        warmup_frac=pcfg.optimizer.warmup_frac,
    )

    if phase == "image_pretrain":
        aug = scaled_augment_params(image_only_augment_params(), pcfg.augment_scale)
    elif phase == "joint":
        aug = scaled_augment_params(joint_augment_params(), pcfg.augment_scale)
    else:
        aug = None

    def run_step(pairs_idx, train, step_rngs):
        batch_pairs = [train_pairs[i] for i in pairs_idx] if train else pairs_idx
        reports = [ds.reports[p.report_id] for p in batch_pairs]
        images = [ds.images[p.image_id] for p in batch_pairs]
        if phase == "text_phase2":
            return _phase2_step(bundle, reports, vocab, step_rngs, pcfg.mask_rate, train)
        if phase == "text_phase3":
            return _phase3_step(bundle, reports, vocab, step_rngs, pcfg.mask_rate,
                                cfg.temps, train)
        if phase == "image_pretrain":
            return _simclr_step(bundle, images, aug, step_rngs, cfg.temps.tau2, train)
        return _joint_step(bundle, images, reports, vocab, aug, step_rngs,
                           pcfg.mask_rate, cfg.temps, train)

    def validation_loss():
        if not val_pairs:
            return None
        # Fixed rng every eval so the validation loss is comparable across epochs.
        fixed = np.random.default_rng(val_seed)
        vr = {"text_aug": fixed, "mask": fixed, "image_aug": fixed, "dropout": None}
        total, count = 0.0, 0
        for i in range(0, len(val_pairs), batch_size):
            chunk = val_pairs[i : i + batch_size]
            if phase in CONTRASTIVE_PHASES and len(chunk) < 2:
                continue
            lv = run_step(chunk, False, vr)
            total += lv.scalar * len(chunk)
            count += len(chunk)
        return total / count if count else None

    out_dir = _phase_dir(cfg, phase)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.csv"

    best_loss = float("inf")
    best_state = bundle.state_dict()
    best_epoch = 0
    bad_evals = 0
    global_step = 0
    t_start = time.time()

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)

        def log_row(epoch, step, split, lv: LossValue):
            comp = lv.components
            writer.writerow([
                phase, epoch, step, split, f"{lv.scalar:.10f}",
                *(f"{comp[k]:.10f}" if k in comp else "" for k in ("mlm", "rsm", "ga", "simclr")),
            ])

        stop = False
        for epoch in range(1, pcfg.epochs + 1):
            for batch_idx in _epoch_batches(len(train_pairs), batch_size, rngs["order"]):
                bundle.zero_grad(components)
                lv = run_step(batch_idx, True, rngs)
                if not np.isfinite(lv.scalar):
                    raise RuntimeError(
                        f"non-finite loss in {phase} at step {global_step}: "
                        f"{lv.scalar} (components {lv.components})"
                    )
                opt.step()
                global_step += 1
                log_row(epoch, global_step, "train", lv)

            if epoch % pcfg.eval_every == 0 or epoch == pcfg.epochs:
                vl = validation_loss()
                if vl is not None:
                    log_row(epoch, global_step, "val", LossValue(scalar=vl))
                    if vl < best_loss:
                        best_loss = vl
                        best_state = bundle.state_dict()
                        best_epoch = epoch
                        bad_evals = 0
                    else:
                        bad_evals += 1
                        if bad_evals >= pcfg.patience:
                            stop = True
            if stop:
                break

    if best_loss == float("inf"):
        best_loss = float("nan")
        best_state = bundle.state_dict()
        best_epoch = pcfg.epochs

    rng_state = {name: rng.bit_generator.state for name, rng in rngs.items()}
    last = Checkpoint(phase=phase, epoch=epoch, best_val_loss=best_loss,
                      bundle=bundle, rng_state=rng_state)
    save_checkpoint(out_dir / "last.npz", last)
    bundle.load_state_dict(best_state)
    best = Checkpoint(phase=phase, epoch=best_epoch, best_val_loss=best_loss,
                      bundle=bundle, rng_state=rng_state)
    save_checkpoint(out_dir / "best.npz", best)
    elapsed = time.time() - t_start
    print(f"[{phase}] epochs={epoch} steps={global_step} "
          f"best_val={best_loss:.4f} ({elapsed:.1f}s)")
    return best
