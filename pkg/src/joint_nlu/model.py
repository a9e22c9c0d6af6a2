"""Joint intent classification and slot filling on top of the encoder and adapters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .adapters import (
    IAA_SUM_MODES,
    EmptyUtteranceError,
    IaaParams,
    SaaOutput,
    SaaParams,
    export_attention,
    iaa_forward,
    saa_forward,
    cls_hidden,
)
from .dataset import IGNORE_INDEX, Batch, LabelCatalog, LabeledUtterance, make_batch
from .encoder import EncoderConfig, encode, encoder_param_count, init_encoder_params
from .tensor import Tensor
from .wordpiece import WordpieceVocab, tokenize_utterance


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AblationConfig:
    use_saa: bool = True
    use_iaa: bool = True
    feed_intent_to_slot: bool = True
    slot_only: bool = False
    beta: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def intent_weight(self) -> float:
        return 0.0 if self.slot_only else self.beta

    @property
    def feeds_intent(self) -> bool:
        return self.feed_intent_to_slot and not self.slot_only


ABLATIONS = {
    "full": AblationConfig(),
    "w/o IAA": AblationConfig(use_iaa=False),
    "w/o SAA": AblationConfig(use_saa=False),
    "w/o intent feature": AblationConfig(feed_intent_to_slot=False),
    "slot only": AblationConfig(slot_only=True),
}


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    n_intents: int
    n_slots: int
    activation: str = "tanh"
    iaa_sum: str = "word_reps"
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.activation not in T.ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.iaa_sum not in IAA_SUM_MODES:
            raise ConfigurationError(f"iaa_sum must be one of {IAA_SUM_MODES}")
        if self.n_intents < 1 or self.n_slots < 1:
            raise ConfigurationError("need at least one intent and one slot label")


@dataclass
class LossReport:
    intent: float
    slot: float
    joint: float
    beta: float
    tensor: Tensor | None = None


@dataclass
class ForwardOutput:
    intent_logits: Tensor     # [B, n_intents]
    slot_logits: Tensor       # [B, W, n_slots]
    word_mask: np.ndarray     # [B, W]
    saa: SaaOutput
    iaa_alpha: np.ndarray | None
    loss: LossReport


@dataclass
class JointPrediction:
    words: list[str]
    intent: str
    intent_probs: np.ndarray
    slots: list[str]
    slot_probs: np.ndarray
    attention: list

    def format(self) -> str:
        lines = [f"intent\t{self.intent}"]
        lines += [f"{w}\t{s}" for w, s in zip(self.words, self.slots)]
        return "\n".join(lines) + "\n"


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = init_encoder_params(cfg.encoder, rng)
    d, std = cfg.encoder.d_model, cfg.encoder.init_std
    extra = {
        "saa.w_query": rng.normal(0.0, std, (d, d)),
        "saa.w_key": rng.normal(0.0, std, (d, d)),
        "saa.w_value": rng.normal(0.0, std, (d, d)),
        "iaa.w_intent": rng.normal(0.0, std, (d, d)),
        "intent.w": rng.normal(0.0, std, (cfg.n_intents, d)),
        "intent.b": np.zeros(cfg.n_intents),
        "slot.w": rng.normal(0.0, std, (cfg.n_slots, d)),
        "slot.b": np.zeros(cfg.n_slots),
    }
    params.update({k: T.parameter(v, name=k) for k, v in extra.items()})
    return params


def count_parameters(params: dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())


def expected_parameter_count(cfg: ModelConfig) -> int:
    d = cfg.encoder.d_model
    return (encoder_param_count(cfg.encoder) + 4 * d * d
            + cfg.n_intents * (d + 1) + cfg.n_slots * (d + 1))


def _loss_targets(ids: np.ndarray, n_classes: int) -> np.ndarray:
    # labels unseen in training cannot be scored by the decoder
    ids = np.asarray(ids).copy()
    ids[ids >= n_classes] = IGNORE_INDEX
    return ids


class JointModel:
    """Encoder, sub-word adapter, intent adapter and the two softmax decoders."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        self._check_shapes()

    def _check_shapes(self):
        d = self.cfg.encoder.d_model
        want = {"intent.w": (self.cfg.n_intents, d), "slot.w": (self.cfg.n_slots, d),
                "intent.b": (self.cfg.n_intents,), "slot.b": (self.cfg.n_slots,)}
        for k, shape in want.items():
            if k not in self.params or self.params[k].shape != shape:
                got = self.params[k].shape if k in self.params else None
                raise ConfigurationError(f"parameter {k} has shape {got}, expected {shape}")

    def with_ablation(self, ablation: AblationConfig) -> "JointModel":
        return JointModel(replace(self.cfg, ablation=ablation), self.params)

    def num_parameters(self) -> int:
        return count_parameters(self.params)

    def forward(self, batch: Batch, train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        cfg, p, abl = self.cfg, self.params, self.cfg.ablation
        drop = cfg.encoder.dropout_p
        enc = encode(batch.ids, batch.mask, p, cfg.encoder, train, rng)
        hidden = enc.hidden
        saa = saa_forward(hidden, batch.alignments,
                          SaaParams(p["saa.w_query"], p["saa.w_key"], p["saa.w_value"], cfg.activation),
                          use_saa=abl.use_saa)
        reps = T.dropout(saa.reps, drop, train, rng)
        if abl.use_iaa:
            iaa = iaa_forward(hidden, saa, IaaParams(p["iaa.w_intent"], cfg.activation),
                              cfg.iaa_sum, reps=reps)
            h_cls, iaa_alpha = iaa.h_cls, iaa.alpha
            intent_feat = T.dropout(iaa.h_intent, drop, train, rng)
            intent_in = T.add(intent_feat, h_cls)
        else:
            # no adapter: [CLS] alone drives the intent and is the intent feature
            h_cls, iaa_alpha = cls_hidden(hidden), None
            intent_feat = h_cls
            intent_in = h_cls
        intent_logits = T.linear(intent_in, p["intent.w"], p["intent.b"])
        b, w, d = reps.shape
        slot_in = T.add(reps, T.reshape(intent_feat, (b, 1, d))) if abl.feeds_intent else reps
        slot_logits = T.linear(slot_in, p["slot.w"], p["slot.b"])

        loss_i = T.cross_entropy(intent_logits, _loss_targets(batch.intent_ids, cfg.n_intents))
        slot_targets = _loss_targets(batch.slot_ids[:, :w], cfg.n_slots).reshape(-1)
        loss_s = T.cross_entropy(T.reshape(slot_logits, (b * w, cfg.n_slots)), slot_targets)
        beta = abl.intent_weight
        joint = T.add(T.mul(loss_i, beta), T.mul(loss_s, 1.0 - beta))
        report = LossReport(loss_i.item(), loss_s.item(), joint.item(), beta, joint)
        return ForwardOutput(intent_logits, slot_logits, saa.grid.word_mask, saa, iaa_alpha, report)

    def decode(self, out: ForwardOutput, catalog: LabelCatalog):
        """Argmax intent and per-word slot labels for every row of a forward pass."""
        intents = out.intent_logits.data.argmax(-1)
        slots = out.slot_logits.data.argmax(-1)
        result = []
        for r in range(len(intents)):
            n = int(out.word_mask[r].sum())
            result.append((catalog.intent_name(int(intents[r])),
                           [catalog.slot_tag(int(s)) for s in slots[r, :n]]))
        return result

    def predict(self, words, vocab: WordpieceVocab, catalog: LabelCatalog) -> JointPrediction:
        if isinstance(words, str):
            words = words.split()
        words = [w.lower() for w in words]
        if not words:
            raise EmptyUtteranceError("cannot predict on an empty utterance")
        tok = tokenize_utterance(words, vocab, self.cfg.encoder.max_seq_len)
        dummy = LabeledUtterance(tuple(words), ("O",) * len(words), catalog.intents[0])
        batch = make_batch([dummy], [tok], vocab, catalog)
        with T.no_grad():
            out = self.forward(batch)
        intent, slots = self.decode(out, catalog)[0]
        return JointPrediction(
            words=words,
            intent=intent,
            intent_probs=_softmax_rows(out.intent_logits.data[0]),
            slots=slots,
            slot_probs=_softmax_rows(out.slot_logits.data[0, : len(words)]),
            attention=export_attention(out.saa, [tok])[0],
        )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(-1, keepdims=True))
    return z / z.sum(-1, keepdims=True)


def batch_loss(model: JointModel, batch: Batch) -> Tensor:
    return model.forward(batch).loss.tensor


def predict_batches(model: JointModel, batches: Sequence[Batch], catalog: LabelCatalog):
    """Gold and predicted (intent, slots) pairs over batches, in batch order."""
    gold, pred = [], []
    with T.no_grad():
        for batch in batches:
            pred.extend(model.decode(model.forward(batch), catalog))
            gold.extend((u.intent, list(u.slot_labels)) for u in batch.utterances)
    return gold, pred


def gradient_check_batch(model: JointModel, batch: Batch, eps: float = 1e-4,
                         max_entries: int | None = None, rng=None) -> T.GradCheckReport:
    """Finite-difference check of the joint loss over every parameter tensor."""
    if model.cfg.encoder.dropout_p:
        model = JointModel(replace(model.cfg, encoder=replace(model.cfg.encoder, dropout_p=0.0)),
                           model.params)
    return T.grad_check(lambda: model.forward(batch).loss.tensor, model.params, eps,
                        max_entries=max_entries, rng=rng)
