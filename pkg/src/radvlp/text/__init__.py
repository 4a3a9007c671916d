from .encoder import (
    MlmHead,
    ProjectedText,
    TextEncoder,
    TextEncoderConfig,
    TextFeatures,
    encode_text,
    make_projection_head,
    prepare_sequence,
    project_text,
)
from .vocab import (
    CLS,
    MASK,
    PAD,
    SEP,
    SPECIAL_TOKENS,
    UNK,
    TokenSequence,
    Vocabulary,
    build_vocab,
    normalize_words,
    token_stats,
    tokenize,
)

__all__ = [
    "CLS",
    "MASK",
    "MlmHead",
    "PAD",
    "ProjectedText",
    "SEP",
    "SPECIAL_TOKENS",
    "TextEncoder",
    "TextEncoderConfig",
    "TextFeatures",
    "TokenSequence",
    "UNK",
    "Vocabulary",
    "build_vocab",
    "encode_text",
    "make_projection_head",
    "normalize_words",
    "prepare_sequence",
    "project_text",
    "token_stats",
    "tokenize",
]
