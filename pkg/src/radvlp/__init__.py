"""radvlp: desk-scale vision-language pretraining for paired image-report data.

Subpackages:
  corpus      data model, manifest IO, synthetic corpus, annotation curation
  text        WordPiece vocabulary, tokenizer, transformer encoder
  vision      convolutional grid encoder, projection, pooling
  objectives  training losses and analytic gradients
  augment     text/image augmentation, whole-word masking
  metrics     grounding (CNR, mIoU, Dice) and classification metrics
  inference   zero-shot classification, similarity maps, linear probes
  pipeline    phase orchestration, checkpoints, CLI
"""

__version__ = "0.1.0"
