import numpy as np
import pytest

from joint_nlu import tensor as T
from joint_nlu.dataset import batch_iter
from joint_nlu.encoder import EncoderConfig, default_toy_config, encode, encoder_param_count, init_encoder_params


def _setup(vocab_size=30, **kw):
    cfg = EncoderConfig(vocab_size=vocab_size, **{"d_model": 16, "n_layers": 1, "n_heads": 2,
                                                  "d_ff": 24, "dropout_p": 0.0, **kw})
    return cfg, init_encoder_params(cfg, np.random.default_rng(0))


def test_default_toy_config():
    cfg = default_toy_config(100)
    assert cfg.dropout_p == 0.1
    assert cfg.d_model % cfg.n_heads == 0
    assert cfg.n_layers == 2
    assert (cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.max_seq_len) == (64, 4, 128, 128)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, dropout_p=1.0)


def test_shape_law():
    cfg, params = _setup()
    out = encode(np.array([[2, 3]]), np.ones((1, 2), bool), params, cfg)
    assert out.hidden.shape == (1, 2, 16)


def test_out_of_range_id_reports_position():
    cfg, params = _setup()
    with pytest.raises(IndexError, match="position 1"):
        encode(np.array([[2, 99]]), np.ones((1, 2), bool), params, cfg)


def test_param_count_formula():
    cfg, params = _setup()
    assert sum(p.size for p in params.values()) == encoder_param_count(cfg)


def test_pad_content_does_not_leak(corpus, vocab):
    cfg, params = _setup(len(vocab))
    batches, _ = batch_iter(corpus.train[:6], vocab, corpus.catalog, 6)
    b = batches[0]
    assert not b.mask.all()
    with T.no_grad():
        ref = encode(b.ids, b.mask, params, cfg).hidden.data
        ids = b.ids.copy()
        ids[~b.mask] = 7  # arbitrary non-pad token in pad positions
        alt = encode(ids, b.mask, params, cfg).hidden.data
    diff = np.abs(ref - alt)[b.mask]
    assert diff.max() <= 1e-12


def test_pad_embedding_perturbation(corpus, vocab):
    cfg, params = _setup(len(vocab))
    batches, _ = batch_iter(corpus.train[:6], vocab, corpus.catalog, 6)
    b = batches[0]
    with T.no_grad():
        ref = encode(b.ids, b.mask, params, cfg).hidden.data
        params["emb.tok"].data[vocab.pad_id] += 5.0
        alt = encode(b.ids, b.mask, params, cfg).hidden.data
        params["emb.tok"].data[vocab.pad_id] -= 5.0
    assert np.abs(ref - alt)[b.mask].max() <= 1e-12


def test_attention_rows_normalized(corpus, vocab):
    cfg, params = _setup(len(vocab), n_layers=2)
    batches, _ = batch_iter(corpus.train[:5], vocab, corpus.catalog, 5)
    b = batches[0]
    with T.no_grad():
        _, maps = encode(b.ids, b.mask, params, cfg, return_attention=True)
    for attn in maps:
        sums = attn.data.sum(-1)
        assert np.abs(sums - 1.0).max() <= 1e-12
        assert (attn.data[..., ~b.mask[0]][0] == 0).all()


def test_batch_order_equivariance(corpus, vocab):
    cfg, params = _setup(len(vocab))
    batches, _ = batch_iter(corpus.train[:4], vocab, corpus.catalog, 4)
    b = batches[0]
    perm = np.array([2, 0, 3, 1])
    with T.no_grad():
        ref = encode(b.ids, b.mask, params, cfg).hidden.data
        alt = encode(b.ids[perm], b.mask[perm], params, cfg).hidden.data
    np.testing.assert_allclose(alt, ref[perm], atol=1e-12)


def test_deterministic_without_dropout(corpus, vocab):
    cfg, params = _setup(len(vocab))
    batches, _ = batch_iter(corpus.train[:3], vocab, corpus.catalog, 3)
    b = batches[0]
    with T.no_grad():
        a = encode(b.ids, b.mask, params, cfg, train=False).hidden.data
        c = encode(b.ids, b.mask, params, cfg, train=False).hidden.data
    assert a.tobytes() == c.tobytes()


def test_dropout_with_same_seed_reproduces(corpus, vocab):
    cfg, params = _setup(len(vocab), dropout_p=0.1)
    batches, _ = batch_iter(corpus.train[:3], vocab, corpus.catalog, 3)
    b = batches[0]
    with T.no_grad():
        a = encode(b.ids, b.mask, params, cfg, True, np.random.default_rng(3)).hidden.data
        c = encode(b.ids, b.mask, params, cfg, True, np.random.default_rng(3)).hidden.data
        e = encode(b.ids, b.mask, params, cfg, False).hidden.data
    assert a.tobytes() == c.tobytes()
    assert not np.array_equal(a, e)


def test_toy_gradient_check(corpus, vocab):
    cfg, params = _setup(len(vocab), d_model=32, n_heads=2, d_ff=48)
    batches, _ = batch_iter(corpus.train[:2], vocab, corpus.catalog, 2)
    b = batches[0]
    w = np.random.default_rng(1).normal(size=(2, b.ids.shape[1], 32)) * b.mask[..., None]

    def f():
        return T.sum(T.mul(encode(b.ids, b.mask, params, cfg).hidden, w))

    report = T.grad_check(f, params, max_entries=24)
    assert report.worst <= 1e-3, report.max_rel_err
