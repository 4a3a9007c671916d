"""Checkpoint persistence.

A checkpoint is one ``.npz`` holding every model parameter (float64, so a
reload reproduces forward results bit for bit), the vocabulary, the model
config header (dims, stride, dilation flag), the training rng state, and
bookkeeping (phase, epoch, best validation loss).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..models import ModelBundle, ModelConfig
from ..text.vocab import Vocabulary

_PARAM_PREFIX = "param/"


@dataclass
class Checkpoint:
    phase: str
    epoch: int
    best_val_loss: float
    bundle: ModelBundle
    rng_state: dict | None = None

    def save(self, path):
        save_checkpoint(path, self)


def save_checkpoint(path, ckpt: Checkpoint):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {_PARAM_PREFIX + k: v for k, v in ckpt.bundle.state_dict().items()}
    meta = {
        "phase": ckpt.phase,
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "model_config": ckpt.bundle.cfg.to_dict(),
        "rng_state": ckpt.rng_state,
    }
    arrays["meta"] = np.array(json.dumps(meta))
    arrays["vocab"] = np.array("\n".join(ckpt.bundle.vocab.tokens))
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        tokens = str(data["vocab"]).split("\n")
        state = {
            k[len(_PARAM_PREFIX):]: data[k] for k in data.files if k.startswith(_PARAM_PREFIX)
        }
    vocab = Vocabulary(tokens=tokens)
    cfg = ModelConfig.from_dict(meta["model_config"])
    bundle = ModelBundle(vocab, cfg, seed=0)
    bundle.load_state_dict(state)
    return Checkpoint(
        phase=meta["phase"],
        epoch=meta["epoch"],
        best_val_loss=meta["best_val_loss"],
        bundle=bundle,
        rng_state=meta.get("rng_state"),
    )
