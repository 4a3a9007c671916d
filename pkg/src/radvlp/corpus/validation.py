"""Annotation curation rules.

Seven filtering rules govern whether a phrase/box pair is usable for
grounding evaluation. Only two kinds of checks have mechanical definitions
and can auto-reject here: the token-length limit (rule 7, counted with the
project tokenizer, full stop included) and box geometry (a sub-case of the
rule-3 box/phrase mismatch). Everything else needs a human reader, so those
rules are surfaced as ``needs_review`` rather than guessed at.
"""

from __future__ import annotations

from ..text.vocab import Vocabulary, tokenize
from .types import GroundingAnnotation, ValidationVerdict

MAX_PHRASE_TOKENS = 30

# Rules with no mechanical definition; listed on every needs_review verdict.
REVIEW_RULES = (1, 2, 3, 4, 5, 6)


def validate_annotation(
    annotation: GroundingAnnotation,
    tokenizer: Vocabulary,
    image_size: tuple[int, int] | None = None,
    assume_reviewed: bool = False,
) -> ValidationVerdict:
    """Apply the curation rules to one annotation.

    ``image_size`` (height, width) enables the boxes-inside-image check.
    ``assume_reviewed`` is the caller policy hook: when True, an annotation
    that passes every mechanical rule is accepted instead of being routed
    to review.
    """
    violated: list[int] = []
    messages: list[str] = []

    n_tokens = len(tokenize(annotation.phrase, tokenizer).ids)
    if n_tokens > MAX_PHRASE_TOKENS:
        violated.append(7)
        messages.append(f"phrase is {n_tokens} tokens (limit {MAX_PHRASE_TOKENS})")

    for box in annotation.boxes:
        x, y, w, h = box
        if w <= 0 or h <= 0:
            if 3 not in violated:
                violated.append(3)
            messages.append(f"degenerate box {box}")
        elif image_size is not None:
            ih, iw = image_size
            if x < 0 or y < 0 or x + w > iw or y + h > ih:
                if 3 not in violated:
                    violated.append(3)
                messages.append(f"box {box} outside {iw}x{ih} image")

    if violated:
        return ValidationVerdict(
            status="reject", rule_ids=sorted(violated), message="; ".join(messages)
        )
    if assume_reviewed:
        return ValidationVerdict(status="accept", rule_ids=[], message="mechanical rules pass")
    return ValidationVerdict(
        status="needs_review",
        rule_ids=list(REVIEW_RULES),
        message="mechanical rules pass; clinical rules need a reviewer",
    )
