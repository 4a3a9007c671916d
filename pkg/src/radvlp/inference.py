"""Zero-shot classification, phrase-grounding similarity maps, and linear probes.

Zero-shot classification is an image-text similarity task: class prompts
are embedded into the joint space and an image's class probabilities are
the softmax over the cosine similarities between its global embedding and
the prompt embeddings, with no extra temperature. The linear probe reuses
the prompt embeddings as its initial weights (bias zero), which makes its
initial decisions identical to zero-shot by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus.types import ImageRecord
from .models import ModelBundle
from .nn import softmax


@dataclass
class PromptSet:
    prompts: list[str]
    embeddings: np.ndarray  # (C, proj_dim), unit rows

    def __post_init__(self):
        if len(self.prompts) < 2:
            raise ValueError("need at least 2 class prompts")
        if self.embeddings.shape[0] != len(self.prompts):
            raise ValueError("one embedding row per prompt")


@dataclass
class SimilarityMap:
    cells: np.ndarray  # (h, w) in [-1, 1]
    phrase: str
    image_id: str


@dataclass
class LinearProbe:
    beta: np.ndarray  # (proj_dim, C)
    bias: np.ndarray  # (C,)


def embed_prompts(bundle: ModelBundle, prompts) -> PromptSet:
    prompts = list(prompts)
    for p in prompts:
        if not p.strip():
            raise ValueError("empty prompt")
    embeddings = np.stack([bundle.embed_text(p) for p in prompts])
    return PromptSet(prompts=prompts, embeddings=embeddings)


def zero_shot_probs(v: np.ndarray, ps: PromptSet) -> np.ndarray:
    """Class probabilities from a global image embedding."""
    return softmax(ps.embeddings @ v)


def zero_shot_classify(bundle: ModelBundle, img: ImageRecord, ps: PromptSet) -> np.ndarray:
    return zero_shot_probs(bundle.embed_image_global(img), ps)


def similarity_map(bundle: ModelBundle, img: ImageRecord, phrase: str) -> SimilarityMap:
    """Per-cell cosine similarity between the phrase and the projected grid."""
    grid = bundle.image_projected_grid(img)
    t = bundle.embed_text(phrase)
    return SimilarityMap(cells=grid.cells @ t, phrase=phrase, image_id=img.id)


def init_probe(ps: PromptSet) -> LinearProbe:
    """Probe initialized from prompt embeddings; matches zero-shot decisions."""
    return LinearProbe(beta=ps.embeddings.T.copy(), bias=np.zeros(len(ps.prompts)))


def probe_logits(probe: LinearProbe, features: np.ndarray) -> np.ndarray:
    return features @ probe.beta + probe.bias


def train_probe(probe: LinearProbe, features, labels, fraction: float, rng,
                epochs: int = 200, lr: float = 0.1) -> LinearProbe:
    """Fit only (beta, bias) by softmax regression on a label fraction.

    ``features`` are precomputed frozen-encoder embeddings (N, proj_dim);
    ``labels`` are integer class ids. ``fraction`` selects a random subset
    of the rows to train on.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = features.shape[0]
    k = max(1, int(round(fraction * n)))
    idx = rng.permutation(n)[:k]
    x, y = features[idx], labels[idx]
    if np.unique(y).size < 2:
        raise ValueError("training subset contains a single class")

    beta = probe.beta.copy()
    bias = probe.bias.copy()
    if epochs == 0:
        return LinearProbe(beta=beta, bias=bias)
    onehot = np.zeros((k, beta.shape[1]))
    onehot[np.arange(k), y] = 1.0
    for _ in range(epochs):
        p = softmax(x @ beta + bias, axis=1)
        g = (p - onehot) / k
        beta -= lr * (x.T @ g)
        bias -= lr * g.sum(axis=0)
    return LinearProbe(beta=beta, bias=bias)
