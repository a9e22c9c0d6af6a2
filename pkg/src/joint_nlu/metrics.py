"""Intent accuracy, chunk-level slot F1 and sentence-level accuracy."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

_TAG_RE = re.compile(r"(?:O|([BI])-(.+))")


class TagFormatError(ValueError):
    pass


class MetricsAlignmentError(ValueError):
    pass


def _parse(tag: str) -> tuple[str, str]:
    m = _TAG_RE.fullmatch(tag)
    if m is None:
        raise TagFormatError(f"malformed IOB tag {tag!r}")
    return (m.group(1), m.group(2)) if m.group(1) else ("O", "")


def extract_chunks(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Entity chunks ``(type, start, end)`` with ``end`` exclusive.

    An ``I-x`` that does not continue a chunk of type ``x`` opens a new chunk,
    as conlleval does.
    """
    chunks = set()
    cur_type, cur_start = None, 0
    for i, tag in enumerate(tags):
        prefix, typ = _parse(tag)
        continues = prefix == "I" and cur_type == typ
        if cur_type is not None and not continues:
            chunks.add((cur_type, cur_start, i))
            cur_type = None
        if prefix != "O" and not continues:
            cur_type, cur_start = typ, i
    if cur_type is not None:
        chunks.add((cur_type, cur_start, len(tags)))
    return chunks


@dataclass
class SlotScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _check_lengths(gold, pred):
    if len(gold) != len(pred):
        raise MetricsAlignmentError(f"{len(gold)} gold vs {len(pred)} predicted utterances")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise MetricsAlignmentError(f"utterance {i}: {len(g)} gold tags vs {len(p)} predicted")


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> SlotScore:
    """Micro-averaged chunk F1. With no chunks on either side all scores are 1."""
    _check_lengths(gold, pred)
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        gc, pc = extract_chunks(g), extract_chunks(p)
        hit = len(gc & pc)
        tp += hit
        fp += len(pc) - hit
        fn += len(gc) - hit
    if tp + fp + fn == 0:
        return SlotScore(1.0, 1.0, 1.0, 0, 0, 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SlotScore(precision, recall, f1, tp, fp, fn)


def intent_accuracy(gold: Sequence[str], pred: Sequence[str]) -> float:
    if len(gold) != len(pred):
        raise MetricsAlignmentError(f"{len(gold)} gold vs {len(pred)} predicted intents")
    if not gold:
        return 0.0
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def overall_accuracy(gold, pred) -> float:
    """Fraction of utterances whose intent and every slot tag are right.

    ``gold`` and ``pred`` are sequences of ``(intent, tags)`` pairs.
    """
    if len(gold) != len(pred):
        raise MetricsAlignmentError(f"{len(gold)} gold vs {len(pred)} predicted utterances")
    _check_lengths([g[1] for g in gold], [p[1] for p in pred])
    if not gold:
        return 0.0
    return sum(gi == pi and list(gs) == list(ps) for (gi, gs), (pi, ps) in zip(gold, pred)) / len(gold)


@dataclass
class EvalReport:
    intent_acc: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    overall_acc: float
    tp: int
    fp: int
    fn: int
    n_utterances: int

    def machine_line(self) -> str:
        return "\t".join(f"{v:.6f}" for v in (self.intent_acc, self.slot_precision,
                                              self.slot_recall, self.slot_f1, self.overall_acc))

    def summary(self) -> str:
        return (
            f"utterances   {self.n_utterances}\n"
            f"intent acc   {100 * self.intent_acc:.2f}\n"
            f"slot P/R/F1  {100 * self.slot_precision:.2f} / {100 * self.slot_recall:.2f}"
            f" / {100 * self.slot_f1:.2f}  (tp={self.tp} fp={self.fp} fn={self.fn})\n"
            f"overall acc  {100 * self.overall_acc:.2f}\n"
        )


def evaluate(gold, pred) -> EvalReport:
    """Full report from parallel ``(intent, tags)`` pairs."""
    score = slot_f1([g[1] for g in gold], [p[1] for p in pred])
    return EvalReport(
        intent_acc=intent_accuracy([g[0] for g in gold], [p[0] for p in pred]),
        slot_precision=score.precision,
        slot_recall=score.recall,
        slot_f1=score.f1,
        overall_acc=overall_accuracy(gold, pred),
        tp=score.tp,
        fp=score.fp,
        fn=score.fn,
        n_utterances=len(gold),
    )
