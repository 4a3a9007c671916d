"""Model bundle: text encoder, MLM head, projection heads, image encoder.

The bundle is the unit that training phases update and checkpoints persist.
Parameter names are namespaced (``text.``, ``mlm.``, ``tproj.``, ``image.``,
``iproj.``) so a phase can load just the components it needs from an
earlier phase's checkpoint.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .corpus.types import ImageRecord
from .text.encoder import (
    MlmHead,
    TextEncoder,
    TextEncoderConfig,
    encode_text,
    make_projection_head,
    project_text,
)
from .text.vocab import TokenSequence, Vocabulary, tokenize
from .vision import (
    GlobalEmbedding,
    ImageEncoder,
    ImageEncoderConfig,
    LocalFeatureGrid,
    ProjectedGrid,
    encode_image,
    pool_global,
    project_grid,
)

COMPONENTS = ("text", "mlm", "tproj", "image", "iproj")


@dataclass
class ModelConfig:
    text: TextEncoderConfig
    image: ImageEncoderConfig

    def to_dict(self):
        return {"text": asdict(self.text), "image": asdict(self.image)}

    @classmethod
    def from_dict(cls, d):
        image = {k: v for k, v in d["image"].items()}
        if "widths" in image:
            image["widths"] = tuple(image["widths"])
        return cls(text=TextEncoderConfig(**d["text"]), image=ImageEncoderConfig(**image))


class ModelBundle:
    def __init__(self, vocab: Vocabulary, cfg: ModelConfig, seed: int):
        rng = np.random.default_rng(seed)
        if cfg.text.vocab_size != len(vocab):
            raise ValueError("text config vocab_size must match the vocabulary")
        self.vocab = vocab
        self.cfg = cfg
        self.text = TextEncoder(cfg.text, rng)
        self.mlm = MlmHead(cfg.text.width, cfg.text.vocab_size, rng)
        self.tproj = make_projection_head(cfg.text.width, cfg.text.proj_dim, rng)
        self.image = ImageEncoder(cfg.image, rng)
        self.iproj = make_projection_head(cfg.image.out_channels, cfg.image.proj_dim, rng)

    def component(self, name: str) -> nn.Module:
        return {"text": self.text, "mlm": self.mlm, "tproj": self.tproj,
                "image": self.image, "iproj": self.iproj}[name]

    def named_params(self, components=COMPONENTS):
        for name in components:
            yield from self.component(name).named_params(prefix=name + ".")

    def zero_grad(self, components=COMPONENTS):
        for name in components:
            self.component(name).zero_grad()

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state, components=COMPONENTS, strict=True):
        own = {n: p for n, p in self.named_params(components)}
        for name, p in own.items():
            if name not in state:
                if strict:
                    raise KeyError(f"checkpoint missing parameter {name}")
                continue
            if p.value.shape != state[name].shape:
                raise ValueError(f"shape mismatch loading {name}")
            p.value[...] = state[name]

    def weights_hash(self, components=COMPONENTS) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_params(components)):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    # -- eval-mode conveniences -------------------------------------------

    def embed_text(self, text: str) -> np.ndarray:
        """Unit-norm joint-space embedding of a text string."""
        seq = tokenize(text, self.vocab)
        if not seq.ids:
            raise ValueError("cannot embed empty text")
        feats = encode_text(self.text, seq)
        return project_text(self.tproj, feats.cls_feature).t

    def embed_sequence(self, seq: TokenSequence) -> np.ndarray:
        feats = encode_text(self.text, seq)
        return project_text(self.tproj, feats.cls_feature).t

    def image_grid(self, img: ImageRecord) -> LocalFeatureGrid:
        return encode_image(self.image, img)

    def image_projected_grid(self, img: ImageRecord) -> ProjectedGrid:
        return project_grid(self.iproj, self.image_grid(img))

    def embed_image_global(self, img: ImageRecord) -> np.ndarray:
        return pool_global(self.iproj, self.image_grid(img)).v


def build_bundle(vocab: Vocabulary, seed: int,
                 text_cfg: TextEncoderConfig | None = None,
                 image_cfg: ImageEncoderConfig | None = None) -> ModelBundle:
    if text_cfg is None:
        text_cfg = TextEncoderConfig(vocab_size=len(vocab))
    if image_cfg is None:
        image_cfg = ImageEncoderConfig()
    return ModelBundle(vocab, ModelConfig(text=text_cfg, image=image_cfg), seed)
