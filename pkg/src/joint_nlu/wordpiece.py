"""Greedy longest-match-first wordpiece tokenization with word/sub-token alignment."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

CLS, SEP, UNK, PAD = "[CLS]", "[SEP]", "[UNK]", "[PAD]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
MAX_WORD_CHARS = 100
DEFAULT_MAX_SEQ_LEN = 128


class VocabError(ValueError):
    pass


class TruncationError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class WordpieceVocab:
    """Token -> id map with id equal to the token's line number in the vocab file."""

    def __init__(self, tokens: Sequence[str], prefix: str = "##"):
        self.prefix = prefix
        self.tokens = list(tokens)
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.token_to_id:
                raise VocabError(f"duplicate vocab entry {tok!r} at line {i + 1}")
            self.token_to_id[tok] = i
        missing = [t for t in SPECIAL_TOKENS if t not in self.token_to_id]
        if missing:
            raise VocabError(f"vocab lacks special tokens {missing}")
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]

    @classmethod
    def from_file(cls, path, prefix: str = "##") -> "WordpieceVocab":
        text = Path(path).read_text(encoding="utf-8")
        tokens = [line.rstrip("\r") for line in text.split("\n")]
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens, prefix)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def is_continuation(self, token: str) -> bool:
        return token.startswith(self.prefix)


def tokenize_word(word: str, vocab: WordpieceVocab) -> list[str]:
    """Split one lowercased word into wordpieces; [UNK] if any position fails."""
    if not word:
        raise EmptyInputError("cannot tokenize an empty word")
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            cand = word[start:end]
            if start > 0:
                cand = vocab.prefix + cand
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


@dataclass(frozen=True)
class AlignmentMap:
    """Per-word half-open sub-token spans, in sub-token positions including [CLS]."""

    spans: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.spans)

    def widths(self) -> list[int]:
        return [e - s for s, e in self.spans]

    def complex_words(self) -> list[int]:
        return [w for w, (s, e) in enumerate(self.spans) if e - s > 1]

    def validate(self, n_subtokens: int) -> None:
        """Raise if spans are not contiguous, ordered and covering [1, n_subtokens-1)."""
        expect = 1
        for w, (s, e) in enumerate(self.spans):
            if s != expect or e <= s:
                raise ValueError(f"bad span {(s, e)} for word {w}; expected start {expect}")
            expect = e
        if expect != n_subtokens - 1:
            raise ValueError(f"spans end at {expect}, expected {n_subtokens - 1}")


@dataclass(frozen=True)
class TokenizedUtterance:
    words: tuple[str, ...]
    pieces: tuple[str, ...]
    sub_token_ids: tuple[int, ...]
    alignment: AlignmentMap

    def word_pieces(self, w: int) -> list[str]:
        s, e = self.alignment.spans[w]
        return list(self.pieces[s:e])


def tokenize_utterance(
    words: Sequence[str],
    vocab: WordpieceVocab,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> TokenizedUtterance:
    if not words:
        raise EmptyInputError("utterance has no words")
    pieces = [CLS]
    spans = []
    for word in words:
        wp = tokenize_word(word, vocab)
        spans.append((len(pieces), len(pieces) + len(wp)))
        pieces.extend(wp)
    pieces.append(SEP)
    if len(pieces) > max_seq_len:
        raise TruncationError(
            f"utterance {' '.join(words)!r} needs {len(pieces)} sub-tokens, max_seq_len is {max_seq_len}"
        )
    return TokenizedUtterance(
        words=tuple(words),
        pieces=tuple(pieces),
        sub_token_ids=tuple(vocab.id(p) for p in pieces),
        alignment=AlignmentMap(tuple(spans)),
    )


def detokenize(pieces: Iterable[str], prefix: str = "##") -> str:
    return "".join(p[len(prefix):] if i and p.startswith(prefix) else p for i, p in enumerate(pieces))


@dataclass
class SubwordStats:
    n_words: int
    n_multi_piece: int
    distinct_subwords: int
    piece_counts: Counter

    @property
    def multi_piece_fraction(self) -> float:
        return self.n_multi_piece / self.n_words if self.n_words else 0.0


def corpus_subword_stats(utterances, vocab: WordpieceVocab) -> SubwordStats:
    """Count multi-piece word occurrences and distinct sub-words over a corpus.

    ``utterances`` holds word lists or objects with a ``words`` attribute.
    A distinct sub-word is a distinct piece emitted by a multi-piece split.
    """
    utterances = list(utterances)
    if not utterances:
        raise EmptyInputError("corpus is empty")
    n_words = n_multi = 0
    counts: Counter = Counter()
    for utt in utterances:
        for word in getattr(utt, "words", utt):
            pieces = tokenize_word(word, vocab)
            n_words += 1
            if len(pieces) > 1:
                n_multi += 1
                counts.update(pieces)
    return SubwordStats(n_words, n_multi, len(counts), counts)
