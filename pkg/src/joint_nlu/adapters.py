"""Sub-word attention pooling and intent attention pooling.

Both adapters work on a whole padded batch at once. Words are laid out on a
[B, W, S] grid: B utterances, W = most words in any utterance, S = widest
sub-token span. Each grid cell indexes one sub-token of the flattened hidden
state matrix, so gathering the grid gives every word's span side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .wordpiece import AlignmentMap, TokenizedUtterance

IAA_SUM_MODES = ("word_reps", "first_subtoken_hidden")


class AlignmentError(ValueError):
    pass


class EmptyUtteranceError(ValueError):
    pass


@dataclass
class WordGrid:
    index: np.ndarray         # [B, W, S] rows of the flattened [B*L, d] hidden matrix
    span_mask: np.ndarray     # [B, W, S] true on real sub-tokens of the word
    word_mask: np.ndarray     # [B, W] true on real words
    is_complex: np.ndarray    # [B, W] true where the span is wider than one
    cls_index: np.ndarray     # [B] flattened row of each [CLS]

    @property
    def first_index(self) -> np.ndarray:
        return self.index[..., 0]


def build_word_grid(alignments: Sequence[AlignmentMap], seq_len: int) -> WordGrid:
    b = len(alignments)
    if any(len(a) == 0 for a in alignments):
        raise EmptyUtteranceError("utterance with zero words")
    w = max(len(a) for a in alignments)
    s = max(max(a.widths()) for a in alignments)
    index = np.zeros((b, w, s), dtype=np.int64)
    span_mask = np.zeros((b, w, s), dtype=bool)
    word_mask = np.zeros((b, w), dtype=bool)
    for r, a in enumerate(alignments):
        base = r * seq_len
        index[r] = base  # padded cells point at [CLS] so every softmax row has mass
        span_mask[r, :, 0] = True
        for j, (start, end) in enumerate(a.spans):
            if end <= start:
                raise AlignmentError(f"empty span {(start, end)} for word {j} of row {r}")
            if end > seq_len:
                raise AlignmentError(f"span {(start, end)} exceeds sequence length {seq_len}")
            width = end - start
            index[r, j, :width] = base + np.arange(start, end)
            index[r, j, width:] = base + start
            span_mask[r, j, :width] = True
            word_mask[r, j] = True
    widths = span_mask.sum(-1)
    return WordGrid(index, span_mask, word_mask, (widths > 1) & word_mask,
                    np.arange(b, dtype=np.int64) * seq_len)


@dataclass
class SaaParams:
    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    activation: str = "tanh"


@dataclass
class SaaOutput:
    reps: Tensor              # [B, W, d] h for single-piece words, pooled s for complex ones
    pooled: Tensor            # [B, W, d] attention-pooled vector for every word
    first_hidden: Tensor      # [B, W, d] hidden state of each word's first sub-token
    alpha: np.ndarray         # [B, W, S] span attention, zero outside the span
    grid: WordGrid

    def word_alpha(self, row: int, word: int) -> np.ndarray:
        return self.alpha[row, word][self.grid.span_mask[row, word]]


def saa_forward(hidden: Tensor, alignments: Sequence[AlignmentMap], params: SaaParams,
                use_saa: bool = True) -> SaaOutput:
    """Pool each word's sub-token hidden states, queried by its first sub-token.

    With ``use_saa`` off, every word is represented by its first sub-token.
    """
    b, n, d = hidden.shape
    grid = build_word_grid(alignments, n)
    act = T.activation(params.activation)
    flat = T.reshape(hidden, (b * n, d))
    span_h = T.embedding_lookup(flat, grid.index)                 # [B, W, S, d]
    first_h = T.embedding_lookup(flat, grid.first_index)          # [B, W, d]
    q1 = act(T.linear(first_h, params.w_query))
    k = act(T.linear(span_h, params.w_key))
    v = act(T.linear(span_h, params.w_value))
    w = grid.index.shape[1]
    scores = T.sum(T.mul(k, T.reshape(q1, (b, w, 1, d))), axis=-1)   # [B, W, S]
    alpha = T.softmax(scores, axis=-1, mask=grid.span_mask)
    pooled = T.sum(T.mul(T.reshape(alpha, alpha.shape + (1,)), v), axis=2)
    if use_saa:
        reps = T.where(grid.is_complex[..., None], pooled, first_h)
    else:
        reps = first_h
    return SaaOutput(reps, pooled, first_h, alpha.data * grid.span_mask, grid)


@dataclass
class IaaParams:
    w_intent: Tensor
    activation: str = "tanh"


@dataclass
class IaaOutput:
    h_intent: Tensor          # [B, d]
    alpha: np.ndarray         # [B, W], zero on padded words
    h_cls: Tensor             # [B, d]


def cls_hidden(hidden: Tensor) -> Tensor:
    b, n, d = hidden.shape
    return T.embedding_lookup(T.reshape(hidden, (b * n, d)), np.arange(b) * n)


def iaa_forward(hidden: Tensor, saa: SaaOutput, params: IaaParams,
                iaa_sum: str = "word_reps", reps: Tensor | None = None) -> IaaOutput:
    """Score every word against [CLS] and pool words into one intent vector.

    ``reps`` overrides the per-word representations (e.g. after dropout).
    """
    if iaa_sum not in IAA_SUM_MODES:
        raise ValueError(f"iaa_sum must be one of {IAA_SUM_MODES}, got {iaa_sum!r}")
    grid = saa.grid
    if not grid.word_mask.any(axis=1).all():
        raise EmptyUtteranceError("utterance with zero words")
    b, n, d = hidden.shape
    w = grid.word_mask.shape[1]
    reps = saa.reps if reps is None else reps
    act = T.activation(params.activation)
    h1 = cls_hidden(hidden)
    z = act(T.linear(reps, params.w_intent))                              # [B, W, d]
    scores = T.sum(T.mul(z, T.reshape(h1, (b, 1, d))), axis=-1)           # [B, W]
    alpha = T.softmax(T.mul(scores, 1.0 / math.sqrt(d)), axis=-1, mask=grid.word_mask)
    src = reps if iaa_sum == "word_reps" else saa.first_hidden
    h_intent = T.sum(T.mul(T.reshape(alpha, (b, w, 1)), src), axis=1)
    return IaaOutput(h_intent, alpha.data * grid.word_mask, h1)


def export_attention(saa: SaaOutput, tokenized: Sequence[TokenizedUtterance]):
    """Per utterance, a list of ``(word, [(piece, weight), ...])``."""
    out = []
    for r, tok in enumerate(tokenized):
        rows = []
        for j, word in enumerate(tok.words):
            weights = saa.word_alpha(r, j)
            rows.append((word, [(p, float(a)) for p, a in zip(tok.word_pieces(j), weights)]))
        out.append(rows)
    return out


def format_attention(rows) -> str:
    """Tab-separated weight table: ``word<TAB>piece:weight piece:weight``."""
    return "".join(
        f"{word}\t{' '.join(f'{p}:{a:.6f}' for p, a in pieces)}\n" for word, pieces in rows
    )
