"""Loading ATIS/SNIPS-style splits and producing padded batches.

A split directory holds three parallel UTF-8 files: ``seq.in`` (space
separated words), ``seq.out`` (IOB tags) and ``label`` (one intent per line).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .wordpiece import (
    DEFAULT_MAX_SEQ_LEN,
    TokenizedUtterance,
    TruncationError,
    WordpieceVocab,
    tokenize_utterance,
)

log = logging.getLogger(__name__)

IGNORE_INDEX = -100
UNK_LABEL = "<unk>"
_TAG_RE = re.compile(r"O|[BI]-.+")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledUtterance:
    words: tuple[str, ...]
    slot_labels: tuple[str, ...]
    intent: str

    def __post_init__(self):
        if len(self.words) != len(self.slot_labels):
            raise DataFormatError(
                f"{len(self.words)} words but {len(self.slot_labels)} slot labels"
            )
        for tag in self.slot_labels:
            if not _TAG_RE.fullmatch(tag):
                raise DataFormatError(f"malformed IOB tag {tag!r}")


def _read_lines(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r") for ln in lines]


def load_split(root, split_name: str, lowercase: bool = True) -> list[LabeledUtterance]:
    """Read ``root/split_name/{seq.in,seq.out,label}``."""
    d = Path(root) / split_name
    names = ("seq.in", "seq.out", "label")
    for n in names:
        if not (d / n).is_file():
            raise DataFormatError(f"missing file {d / n}")
    seq_in, seq_out, labels = (_read_lines(d / n) for n in names)
    counts = {n: len(x) for n, x in zip(names, (seq_in, seq_out, labels))}
    if len(set(counts.values())) != 1:
        raise DataFormatError(f"line-count mismatch in {d}: {counts}")
    out = []
    for i, (src, tags, intent) in enumerate(zip(seq_in, seq_out, labels), start=1):
        words = src.split()
        tag_list = tags.split()
        if len(words) != len(tag_list):
            raise DataFormatError(
                f"{d}: line {i} has {len(words)} words but {len(tag_list)} tags"
            )
        if lowercase:
            words = [w.lower() for w in words]
        try:
            out.append(LabeledUtterance(tuple(words), tuple(tag_list), intent.strip()))
        except DataFormatError as exc:
            raise DataFormatError(f"{d}: line {i}: {exc}") from None
    return out


@dataclass
class LabelCatalog:
    """Slot-tag and intent ids built from the training split.

    Tags or intents never seen in training map to the id one past the last real
    label; such lookups are counted in ``unseen``.
    """

    slot_tags: list[str]
    intents: list[str]
    unseen: dict[str, int] = field(default_factory=lambda: {"slot": 0, "intent": 0})

    def __post_init__(self):
        self._slot_ids = {t: i for i, t in enumerate(self.slot_tags)}
        self._intent_ids = {t: i for i, t in enumerate(self.intents)}

    @property
    def n_slots(self) -> int:
        return len(self.slot_tags)

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    @property
    def unk_slot_id(self) -> int:
        return self.n_slots

    @property
    def unk_intent_id(self) -> int:
        return self.n_intents

    def slot_id(self, tag: str) -> int:
        i = self._slot_ids.get(tag)
        if i is None:
            self.unseen["slot"] += 1
            return self.unk_slot_id
        return i

    def intent_id(self, intent: str) -> int:
        i = self._intent_ids.get(intent)
        if i is None:
            self.unseen["intent"] += 1
            return self.unk_intent_id
        return i

    def slot_tag(self, i: int) -> str:
        return self.slot_tags[i] if 0 <= i < self.n_slots else UNK_LABEL

    def intent_name(self, i: int) -> str:
        return self.intents[i] if 0 <= i < self.n_intents else UNK_LABEL

    def to_dict(self) -> dict:
        return {"slot_tags": list(self.slot_tags), "intents": list(self.intents)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelCatalog":
        return cls(list(d["slot_tags"]), list(d["intents"]))


def build_catalog(train: Sequence[LabeledUtterance]) -> LabelCatalog:
    if not train:
        raise DataFormatError("cannot build a label catalog from an empty split")
    slots = ["O"]
    intents: list[str] = []
    seen_s, seen_i = {"O"}, set()
    for utt in train:
        for tag in utt.slot_labels:
            if tag not in seen_s:
                seen_s.add(tag)
                slots.append(tag)
        if utt.intent not in seen_i:
            seen_i.add(utt.intent)
            intents.append(utt.intent)
    return LabelCatalog(slots, intents)


@dataclass
class Batch:
    ids: np.ndarray            # [B, L] sub-token ids, PAD-filled
    mask: np.ndarray           # [B, L] bool, true on real sub-tokens
    alignments: list           # AlignmentMap per row
    slot_ids: np.ndarray       # [B, W_max], IGNORE_INDEX-filled
    intent_ids: np.ndarray     # [B]
    utterances: list           # source LabeledUtterance per row
    tokenized: list            # TokenizedUtterance per row

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def word_counts(self) -> list[int]:
        return [len(a) for a in self.alignments]


def make_batch(
    utterances: Sequence[LabeledUtterance],
    tokenized: Sequence[TokenizedUtterance],
    vocab: WordpieceVocab,
    catalog: LabelCatalog,
) -> Batch:
    b = len(utterances)
    length = max(len(t.sub_token_ids) for t in tokenized)
    w_max = max(len(u.words) for u in utterances)
    ids = np.full((b, length), vocab.pad_id, dtype=np.int64)
    slot_ids = np.full((b, w_max), IGNORE_INDEX, dtype=np.int64)
    intent_ids = np.empty(b, dtype=np.int64)
    for r, (utt, tok) in enumerate(zip(utterances, tokenized)):
        ids[r, : len(tok.sub_token_ids)] = tok.sub_token_ids
        slot_ids[r, : len(utt.words)] = [catalog.slot_id(t) for t in utt.slot_labels]
        intent_ids[r] = catalog.intent_id(utt.intent)
    return Batch(
        ids=ids,
        mask=ids != vocab.pad_id,
        alignments=[t.alignment for t in tokenized],
        slot_ids=slot_ids,
        intent_ids=intent_ids,
        utterances=list(utterances),
        tokenized=list(tokenized),
    )


@dataclass
class BatchStats:
    n_batches: int = 0
    n_utterances: int = 0
    skipped_too_long: int = 0


def batch_iter(
    data: Sequence[LabeledUtterance],
    vocab: WordpieceVocab,
    catalog: LabelCatalog,
    batch_size: int,
    shuffle_seed: int | None = None,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> tuple[list[Batch], BatchStats]:
    """Tokenize, optionally shuffle, and pack ``data`` into batches.

    Utterances longer than ``max_seq_len`` sub-tokens are skipped and counted.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    stats = BatchStats()
    kept = []
    for utt in data:
        try:
            kept.append((utt, tokenize_utterance(utt.words, vocab, max_seq_len)))
        except TruncationError as exc:
            stats.skipped_too_long += 1
            log.warning("skipping utterance: %s", exc)
    order = np.arange(len(kept))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(kept))
    batches = []
    for start in range(0, len(kept), batch_size):
        rows = [kept[i] for i in order[start : start + batch_size]]
        batches.append(make_batch([u for u, _ in rows], [t for _, t in rows], vocab, catalog))
    stats.n_batches = len(batches)
    stats.n_utterances = len(kept)
    return batches, stats


def unpad(batch: Batch, vocab: WordpieceVocab, catalog: LabelCatalog) -> list[LabeledUtterance]:
    """Recover labeled utterances from a batch's id matrices."""
    out = []
    for r, tok in enumerate(batch.tokenized):
        n = int(batch.mask[r].sum())
        pieces = [vocab.tokens[i] for i in batch.ids[r, :n]]
        words = []
        for s, e in batch.alignments[r].spans:
            wp = pieces[s:e]
            words.append(tok.words[len(words)] if wp == ["[UNK]"] else
                         "".join(p[len(vocab.prefix):] if j else p for j, p in enumerate(wp)))
        w = len(batch.alignments[r])
        tags = [catalog.slot_tag(int(i)) for i in batch.slot_ids[r, :w]]
        out.append(LabeledUtterance(tuple(words), tuple(tags), catalog.intent_name(int(batch.intent_ids[r]))))
    return out
