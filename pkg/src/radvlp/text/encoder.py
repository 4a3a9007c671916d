"""Transformer text encoder, MLM head, and text projection head.

Pre-norm blocks with learned position embeddings. Dropout (default 0.25,
applied to hidden states and to attention weights) is active only when
``train=True`` is passed; eval-mode forwards are pure functions of the
weights and input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from .vocab import CLS, SEP, TokenSequence, Vocabulary


@dataclass
class TextEncoderConfig:
    vocab_size: int
    width: int = 64
    layers: int = 4
    heads: int = 4
    max_positions: int = 128
    dropout: float = 0.25
    mlp_ratio: int = 4
    proj_dim: int = 128

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")


@dataclass
class TextFeatures:
    token_features: np.ndarray  # (T, width)
    cls_feature: np.ndarray  # (width,)


@dataclass
class ProjectedText:
    t: np.ndarray  # (proj_dim,), unit norm


class SelfAttention(nn.Module):
    def __init__(self, width, heads, rng):
        super().__init__()
        self.heads = heads
        self.dh = width // heads
        self.qkv = self.add_child("qkv", nn.Linear(width, 3 * width, rng))
        self.out = self.add_child("out", nn.Linear(width, width, rng))

    def forward(self, x, bias, attn_drop, rng):
        b, t, d = x.shape
        h, dh = self.heads, self.dh
        qkv, c_qkv = self.qkv.forward(x)
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
        k = k.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
        v = v.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        if bias is not None:
            scores = scores + bias
        probs = nn.softmax(scores)
        probs_d, attn_mask = nn.dropout(probs, attn_drop, rng)
        ctx = probs_d @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, t, d)
        out, c_out = self.out.forward(ctx)
        cache = (c_qkv, q, k, v, probs, probs_d, attn_mask, c_out, (b, t, d))
        return out, cache

    def backward(self, dout, cache):
        c_qkv, q, k, v, probs, probs_d, attn_mask, c_out, (b, t, d) = cache
        h, dh = self.heads, self.dh
        dctx = self.out.backward(dout, c_out)
        dctx = dctx.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
        dprobs_d = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs_d.transpose(0, 1, 3, 2) @ dctx
        dprobs = nn.dropout_grad(dprobs_d, attn_mask)
        dscores = nn.softmax_grad(probs, dprobs)
        dscores /= np.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        def merge(a):
            return a.transpose(0, 2, 1, 3).reshape(b, t, d)
        dqkv = np.concatenate([merge(dq), merge(dk), merge(dv)], axis=-1)
        return self.qkv.backward(dqkv, c_qkv)


class TransformerBlock(nn.Module):
    def __init__(self, width, heads, mlp_ratio, rng):
        super().__init__()
        self.ln1 = self.add_child("ln1", nn.LayerNorm(width))
        self.attn = self.add_child("attn", SelfAttention(width, heads, rng))
        self.ln2 = self.add_child("ln2", nn.LayerNorm(width))
        self.mlp = self.add_child("mlp", nn.Mlp(width, mlp_ratio * width, width, rng))

    def forward(self, x, bias, drop, rng):
        h1, c_ln1 = self.ln1.forward(x)
        a, c_attn = self.attn.forward(h1, bias, drop, rng)
        a_d, m1 = nn.dropout(a, drop, rng)
        x1 = x + a_d
        h2, c_ln2 = self.ln2.forward(x1)
        f, c_mlp = self.mlp.forward(h2)
        f_d, m2 = nn.dropout(f, drop, rng)
        out = x1 + f_d
        return out, (c_ln1, c_attn, m1, c_ln2, c_mlp, m2)

    def backward(self, dout, cache):
        c_ln1, c_attn, m1, c_ln2, c_mlp, m2 = cache
        df = nn.dropout_grad(dout, m2)
        dh2 = self.mlp.backward(df, c_mlp)
        dx1 = dout + self.ln2.backward(dh2, c_ln2)
        da = nn.dropout_grad(dx1, m1)
        dh1 = self.attn.backward(da, c_attn)
        return dx1 + self.ln1.backward(dh1, c_ln1)


class TextEncoder(nn.Module):
    """Token + position embeddings, pre-norm attention blocks, final norm."""

    def __init__(self, cfg: TextEncoderConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.tok = self.add_child("tok", nn.Embedding(cfg.vocab_size, cfg.width, rng))
        self.pos = self.add_param("pos", rng.normal(0.0, 0.02, (cfg.max_positions, cfg.width)))
        self.blocks = [
            self.add_child(f"block{i}", TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio, rng))
            for i in range(cfg.layers)
        ]
        self.ln_f = self.add_child("ln_f", nn.LayerNorm(cfg.width))

    def forward_batch(self, ids, key_mask, train=False, rng=None):
        """Run a padded batch. ``key_mask`` is True at real (non-pad) slots."""
        b, t = ids.shape
        if t > self.cfg.max_positions:
            raise ValueError(
                f"sequence length {t} exceeds max_positions {self.cfg.max_positions}"
            )
        drop = self.cfg.dropout if train else 0.0
        if drop > 0.0 and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        emb, c_tok = self.tok.forward(ids)
        emb = emb + self.pos.value[:t]
        x, m0 = nn.dropout(emb, drop, rng)
        bias = None
        if not key_mask.all():
            bias = np.where(key_mask, 0.0, -1e9)[:, None, None, :]
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x, bias, drop, rng)
            caches.append(c)
        out, c_f = self.ln_f.forward(x)
        return out, (c_tok, m0, caches, c_f, t)

    def backward_batch(self, dout, cache):
        c_tok, m0, caches, c_f, t = cache
        dx = self.ln_f.backward(dout, c_f)
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dx = blk.backward(dx, c)
        demb = nn.dropout_grad(dx, m0)
        self.pos.grad[:t] += demb.sum(axis=0)
        self.tok.backward(demb, c_tok)


class MlmHead(nn.Module):
    """Transform + decode masked-position features to vocabulary logits."""

    def __init__(self, width, vocab_size, rng):
        super().__init__()
        self.dense = self.add_child("dense", nn.Linear(width, width, rng))
        self.ln = self.add_child("ln", nn.LayerNorm(width))
        self.decoder = self.add_child("decoder", nn.Linear(width, vocab_size, rng))

    def forward(self, feats):
        h, c1 = self.dense.forward(feats)
        a = nn.gelu(h)
        n, c2 = self.ln.forward(a)
        logits, c3 = self.decoder.forward(n)
        return logits, (h, c1, c2, c3)

    def backward(self, dlogits, cache):
        h, c1, c2, c3 = cache
        dn = self.decoder.backward(dlogits, c3)
        da = self.ln.backward(dn, c2)
        dh = nn.gelu_grad(h, da)
        return self.dense.backward(dh, c1)


def prepare_sequence(seq: TokenSequence) -> TokenSequence:
    """Wrap a raw token sequence with [CLS] ... [SEP] for the encoder."""
    return TokenSequence(
        ids=[CLS] + list(seq.ids) + [SEP],
        word_starts=[False] + list(seq.word_starts) + [False],
        text_ref=seq.text_ref,
    )


def encode_text(model: TextEncoder, seq: TokenSequence) -> TextFeatures:
    """Eval-mode encoding of one raw sequence; row 0 is the [CLS] feature."""
    prepared = prepare_sequence(seq)
    ids = np.asarray([prepared.ids], dtype=np.int64)
    mask = np.ones_like(ids, dtype=bool)
    feats, _ = model.forward_batch(ids, mask, train=False)
    return TextFeatures(token_features=feats[0], cls_feature=feats[0, 0])


def project_text(head: nn.Mlp, cls_feature: np.ndarray) -> ProjectedText:
    """Project a [CLS] feature to the unit sphere of the joint space."""
    z, _ = head.forward(cls_feature[None, :])
    return ProjectedText(t=nn.normalize_rows(z)[0])


def make_projection_head(width: int, proj_dim: int, rng) -> nn.Mlp:
    return nn.Mlp(width, width, proj_dim, rng)


def sequence_from_vocab(text: str, vocab: Vocabulary) -> TokenSequence:
    from .vocab import tokenize

    return tokenize(text, vocab)
