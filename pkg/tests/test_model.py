from dataclasses import replace
from itertools import product

import numpy as np
import pytest

from joint_nlu import tensor as T
from joint_nlu.adapters import EmptyUtteranceError
from joint_nlu.dataset import LabeledUtterance, batch_iter, build_catalog, load_split
from joint_nlu.encoder import EncoderConfig, encode
from joint_nlu.model import (
    ABLATIONS,
    AblationConfig,
    ConfigurationError,
    JointModel,
    ModelConfig,
    count_parameters,
    expected_parameter_count,
    gradient_check_batch,
    init_params,
)
from joint_nlu.tensor import parameter
from joint_nlu.wordpiece import tokenize_word

from conftest import FIXTURES


def small_cfg(vocab, catalog, d=16, dropout=0.0, **abl):
    enc = EncoderConfig(vocab_size=len(vocab), d_model=d, n_layers=1, n_heads=2, d_ff=24,
                        dropout_p=dropout)
    return ModelConfig(enc, catalog.n_intents, catalog.n_slots, ablation=AblationConfig(**abl))


@pytest.fixture
def batch(corpus, vocab):
    return batch_iter(corpus.train[:8], vocab, corpus.catalog, 8)[0][0]


class TestLoss:
    @pytest.mark.parametrize("beta", [0.0, 0.3, 0.7, 1.0])
    def test_identity(self, corpus, vocab, batch, beta):
        model = JointModel(small_cfg(vocab, corpus.catalog, beta=beta), seed=1)
        loss = model.forward(batch).loss
        assert abs(loss.joint - (beta * loss.intent + (1 - beta) * loss.slot)) <= 1e-12

    def test_edges_exact(self, corpus, vocab, batch):
        params = JointModel(small_cfg(vocab, corpus.catalog), seed=2).params
        one = JointModel(small_cfg(vocab, corpus.catalog, beta=1.0), params).forward(batch).loss
        zero = JointModel(small_cfg(vocab, corpus.catalog, beta=0.0), params).forward(batch).loss
        assert one.joint == one.intent
        assert zero.joint == zero.slot

    def test_default_beta(self):
        assert AblationConfig().beta == 0.7

    def test_slot_only_drops_intent_weight(self, corpus, vocab, batch):
        cfg = small_cfg(vocab, corpus.catalog, slot_only=True, beta=0.7)
        loss = JointModel(cfg, seed=0).forward(batch).loss
        assert cfg.ablation.intent_weight == 0.0
        assert loss.joint == loss.slot

    def test_beta_out_of_range(self):
        with pytest.raises(ConfigurationError):
            AblationConfig(beta=1.5)

    def test_loss_against_manual_cross_entropy(self, corpus, vocab, batch):
        model = JointModel(small_cfg(vocab, corpus.catalog), seed=3)
        out = model.forward(batch)
        z = out.intent_logits.data
        logp = z - z.max(1, keepdims=True)
        logp -= np.log(np.exp(logp).sum(1, keepdims=True))
        want = -logp[np.arange(len(z)), batch.intent_ids].mean()
        assert out.loss.intent == pytest.approx(want, abs=1e-12)


class TestAblations:
    def test_registry(self):
        assert not ABLATIONS["w/o SAA"].use_saa
        assert not ABLATIONS["w/o IAA"].use_iaa
        assert not ABLATIONS["w/o intent feature"].feeds_intent
        assert ABLATIONS["slot only"].intent_weight == 0.0

    def test_without_iaa_uses_cls_only(self, corpus, vocab, batch):
        model = JointModel(small_cfg(vocab, corpus.catalog, use_iaa=False), seed=4)
        out = model.forward(batch)
        with T.no_grad():
            hidden = encode(batch.ids, batch.mask, model.params, model.cfg.encoder).hidden.data
        p = model.params
        want = hidden[:, 0] @ p["intent.w"].data.T + p["intent.b"].data
        np.testing.assert_allclose(out.intent_logits.data, want, atol=1e-12)
        assert out.iaa_alpha is None

    def test_without_intent_feature_slot_logits(self, corpus, vocab, batch):
        model = JointModel(small_cfg(vocab, corpus.catalog, feed_intent_to_slot=False), seed=5)
        out = model.forward(batch)
        p = model.params
        want = out.saa.reps.data @ p["slot.w"].data.T + p["slot.b"].data
        np.testing.assert_allclose(out.slot_logits.data, want, atol=1e-12)

    def test_without_saa_uses_first_subtoken(self, corpus, vocab, batch):
        model = JointModel(small_cfg(vocab, corpus.catalog, use_saa=False), seed=6)
        out = model.forward(batch)
        np.testing.assert_array_equal(out.saa.reps.data, out.saa.first_hidden.data)

    def test_nesting_on_single_piece_corpus(self, corpus, vocab):
        simple = [u for u in corpus.train
                  if all(len(tokenize_word(w, vocab)) == 1 for w in u.words)]
        assert len(simple) >= 2
        b = batch_iter(simple, vocab, corpus.catalog, 16)[0][0]
        full = JointModel(small_cfg(vocab, corpus.catalog), seed=7)
        ablated = full.with_ablation(AblationConfig(use_saa=False))
        a, c = full.forward(b), ablated.forward(b)
        assert a.slot_logits.data.tobytes() == c.slot_logits.data.tobytes()
        assert a.intent_logits.data.tobytes() == c.intent_logits.data.tobytes()
        assert a.loss.joint == c.loss.joint

    @pytest.mark.parametrize("flags", list(product([True, False], repeat=3)))
    def test_gradient_check_small(self, corpus, vocab, flags):
        saa, iaa, feed = flags
        cfg = small_cfg(vocab, corpus.catalog, use_saa=saa, use_iaa=iaa, feed_intent_to_slot=feed)
        utts = [u for u in corpus.train
                if any(len(tokenize_word(w, vocab)) > 1 for w in u.words)][:2]
        b = batch_iter(utts, vocab, corpus.catalog, 2)[0][0]
        report = gradient_check_batch(JointModel(cfg, seed=8), b, max_entries=16,
                                      rng=np.random.default_rng(0))
        assert report.worst <= 1e-3, report.max_rel_err


class TestDecoding:
    def test_argmax_stable_under_shift(self, corpus, vocab, batch):
        model = JointModel(small_cfg(vocab, corpus.catalog), seed=9)
        out = model.forward(batch)
        before = model.decode(out, corpus.catalog)
        out.slot_logits.data[0, 1] += 3.7
        out.intent_logits.data[2] -= 11.0
        assert model.decode(out, corpus.catalog) == before

    def test_predict_length_law(self, corpus, vocab):
        model = JointModel(small_cfg(vocab, corpus.catalog), seed=10)
        for u in corpus.test:
            pred = model.predict(u.words, vocab, corpus.catalog)
            assert len(pred.slots) == len(u.words) == len(u.slot_labels)
            assert len(pred.attention) == len(u.words)
            assert pred.slot_probs.shape == (len(u.words), corpus.catalog.n_slots)
            assert abs(pred.intent_probs.sum() - 1) <= 1e-12

    def test_four_piece_word_gets_one_label(self, piece_vocab):
        train = load_split(FIXTURES / "atis_mini", "train")
        cat = build_catalog(train)
        model = JointModel(small_cfg(piece_vocab, cat), seed=11)
        words = train[0].words
        assert words[-1] == "thirtieth"
        pred = model.predict(" ".join(words), piece_vocab, cat)
        assert len(pred.slots) == len(words)
        word, pieces = pred.attention[-1]
        assert [p for p, _ in pieces] == ["th", "##ir", "##tie", "##th"]
        assert pred.format().count("\n") == 1 + len(words)

    def test_empty_input(self, corpus, vocab):
        model = JointModel(small_cfg(vocab, corpus.catalog), seed=0)
        with pytest.raises(EmptyUtteranceError):
            model.predict("   ", vocab, corpus.catalog)

    def test_predict_is_case_insensitive(self, corpus, vocab):
        model = JointModel(small_cfg(vocab, corpus.catalog), seed=0)
        u = corpus.test[0]
        a = model.predict(u.words, vocab, corpus.catalog)
        b = model.predict([w.upper() for w in u.words], vocab, corpus.catalog)
        assert (a.intent, a.slots) == (b.intent, b.slots)


class TestParameters:
    def test_slot_decoder_count(self):
        params = {"slot.w": parameter(np.zeros((3, 4))), "slot.b": parameter(np.zeros(3))}
        assert count_parameters(params) == 15

    def test_closed_form(self, corpus, vocab):
        cfg = small_cfg(vocab, corpus.catalog, d=64)
        cfg = replace(cfg, encoder=replace(cfg.encoder, n_layers=2, n_heads=4, d_ff=128))
        d, V, L, f, P = 64, len(vocab), 2, 128, 128
        I, S = corpus.catalog.n_intents, corpus.catalog.n_slots
        per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * f + f) + (f * d + d)
        want = V * d + P * d + 2 * d + L * per_layer + 4 * d * d + I * (d + 1) + S * (d + 1)
        got = count_parameters(init_params(cfg, np.random.default_rng(0)))
        assert got == want == expected_parameter_count(cfg)

    def test_monotone_in_width(self, corpus, vocab):
        small = expected_parameter_count(small_cfg(vocab, corpus.catalog, d=16))
        big = expected_parameter_count(small_cfg(vocab, corpus.catalog, d=32))
        assert big > small

    def test_shape_mismatch(self, corpus, vocab):
        cfg = small_cfg(vocab, corpus.catalog)
        params = JointModel(cfg).params
        with pytest.raises(ConfigurationError, match="intent.w"):
            JointModel(replace(cfg, n_intents=cfg.n_intents + 1), params)

    def test_bad_activation(self, corpus, vocab):
        with pytest.raises(ConfigurationError):
            replace(small_cfg(vocab, corpus.catalog), activation="relu6")

    def test_unseen_test_labels_are_ignored_in_loss(self, piece_vocab):
        root = FIXTURES / "atis_mini"
        cat = build_catalog(load_split(root, "train"))
        test = load_split(root, "test")
        model = JointModel(small_cfg(piece_vocab, cat), seed=0)
        b = batch_iter(test, piece_vocab, cat, 4)[0][0]
        assert np.isfinite(model.forward(b).loss.joint)


def test_dropout_changes_training_forward_only(corpus, vocab, batch):
    model = JointModel(small_cfg(vocab, corpus.catalog, dropout=0.3), seed=12)
    with T.no_grad():
        a = model.forward(batch).loss.joint
        b = model.forward(batch).loss.joint
        c = model.forward(batch, train=True, rng=np.random.default_rng(0)).loss.joint
    assert a == b and a != c


def test_labeled_utterance_validation():
    with pytest.raises(ValueError):
        LabeledUtterance(("a", "b"), ("O",), "x")
