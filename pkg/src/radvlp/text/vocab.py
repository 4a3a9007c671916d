"""WordPiece vocabulary induction and greedy tokenization.

Induction is the likelihood-gain merge procedure: starting from single
characters (word-internal pieces carry the ``##`` continuation prefix),
repeatedly merge the adjacent pair maximizing count(ab) / (count(a) *
count(b)) until the token budget is reached or no pair remains. Ties break
lexicographically, so the result is deterministic for a fixed corpus and
budget.

Tokenization lowercases, splits on whitespace and punctuation, then runs
greedy longest-match-first against the vocabulary per word. A word with a
character outside the vocabulary alphabet becomes a single [UNK].
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD, UNK, CLS, SEP, MASK = range(5)
CONTINUATION = "##"


@dataclass
class Vocabulary:
    tokens: list[str]
    continuation_prefix: str = CONTINUATION
    token_to_id: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        for i, s in enumerate(SPECIAL_TOKENS):
            if self.tokens[i] != s:
                raise ValueError(f"special token {s} missing at reserved id {i}")

    def __len__(self):
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {"PAD": PAD, "UNK": UNK, "CLS": CLS, "SEP": SEP, "MASK": MASK}

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]

    def is_special_id(self, token_id: int) -> bool:
        return token_id < len(SPECIAL_TOKENS)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens=tokens)


@dataclass
class TokenSequence:
    ids: list[int]
    word_starts: list[bool]
    text_ref: str

    def __post_init__(self):
        if len(self.ids) != len(self.word_starts):
            raise ValueError("ids and word_starts length mismatch")

    def __len__(self):
        return len(self.ids)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize_words(text: str) -> list[str]:
    """Lowercase and split into words; punctuation marks become words."""
    words = []
    buf = []
    for ch in text.lower():
        if ch.isspace():
            if buf:
                words.append("".join(buf))
                buf = []
        elif _is_punct(ch):
            if buf:
                words.append("".join(buf))
                buf = []
            words.append(ch)
        else:
            buf.append(ch)
    if buf:
        words.append("".join(buf))
    return words


def _word_counts(corpus) -> dict[str, int]:
    counts: dict[str, int] = {}
    for doc in corpus:
        for w in normalize_words(doc):
            counts[w] = counts.get(w, 0) + 1
    return counts


def build_vocab(corpus, size: int, min_pair_count: int = 1) -> Vocabulary:
    """Induce a WordPiece vocabulary of at most ``size`` tokens."""
    word_counts = _word_counts(corpus)
    if not word_counts:
        raise ValueError("corpus is empty")

    alphabet = sorted({ch for w in word_counts for ch in w})
    base = list(SPECIAL_TOKENS) + alphabet + [CONTINUATION + ch for ch in alphabet]
    if size < len(base):
        raise ValueError(
            f"vocabulary budget {size} too small: alphabet plus specials needs {len(base)}"
        )

    # Each distinct word as a list of current pieces, weighted by frequency.
    words = []
    for w, c in sorted(word_counts.items()):
        pieces = [w[0]] + [CONTINUATION + ch for ch in w[1:]]
        words.append((pieces, c))

    vocab = dict.fromkeys(base)
    while len(vocab) < size:
        pair_counts: dict[tuple[str, str], int] = {}
        piece_counts: dict[str, int] = {}
        for pieces, c in words:
            for p in pieces:
                piece_counts[p] = piece_counts.get(p, 0) + c
            for a, b in zip(pieces, pieces[1:]):
                pair_counts[(a, b)] = pair_counts.get((a, b), 0) + c
        best = None
        best_score = 0.0
        for (a, b), c in pair_counts.items():
            if c < min_pair_count:
                continue
            score = c / (piece_counts[a] * piece_counts[b])
            if best is None or score > best_score or (score == best_score and (a, b) < best):
                best, best_score = (a, b), score
        if best is None:
            break
        a, b = best
        merged = a + b[len(CONTINUATION):]
        vocab[merged] = None
        new_words = []
        for pieces, c in words:
            out = []
            i = 0
            while i < len(pieces):
                if i + 1 < len(pieces) and pieces[i] == a and pieces[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(pieces[i])
                    i += 1
            new_words.append((out, c))
        words = new_words

    return Vocabulary(tokens=list(vocab))


def _match_word(word: str, v: Vocabulary) -> list[str] | None:
    """Greedy longest-match split of one word; None if any span is uncoverable."""
    pieces = []
    start = 0
    n = len(word)
    while start < n:
        prefix = CONTINUATION if start > 0 else ""
        end = n
        found = None
        while end > start:
            cand = prefix + word[start:end]
            if cand in v.token_to_id:
                found = cand
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces


def tokenize(text: str, v: Vocabulary) -> TokenSequence:
    """Tokenize ``text`` into WordPiece ids with word-boundary marks."""
    words = normalize_words(text)
    ids: list[int] = []
    starts: list[bool] = []
    for w in words:
        pieces = _match_word(w, v)
        if pieces is None:
            ids.append(UNK)
            starts.append(True)
            continue
        for j, p in enumerate(pieces):
            ids.append(v.token_to_id[p])
            starts.append(j == 0)
    return TokenSequence(ids=ids, word_starts=starts, text_ref=" ".join(words))


def token_stats(corpus, v: Vocabulary) -> dict[str, float]:
    """Average tokens per document and percent increase over word count."""
    docs = list(corpus)
    if not docs:
        raise ValueError("corpus is empty")
    token_total = 0
    word_total = 0
    for doc in docs:
        token_total += len(tokenize(doc, v).ids)
        word_total += len(normalize_words(doc))
    if word_total == 0:
        raise ValueError("corpus contains no words")
    avg_tokens = token_total / len(docs)
    avg_words = word_total / len(docs)
    return {
        "avg_tokens": avg_tokens,
        "avg_words": avg_words,
        "pct_increase_vs_words": 100.0 * (avg_tokens - avg_words) / avg_words,
    }
