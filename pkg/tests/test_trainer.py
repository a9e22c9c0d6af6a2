import dataclasses

import numpy as np
import pytest

from joint_nlu import tensor as T
from joint_nlu.dataset import LabeledUtterance, build_catalog
from joint_nlu.model import JointModel
from joint_nlu.tensor import NumericError, parameter
from joint_nlu.trainer import (
    REFERENCE_BATCH_SIZE,
    REFERENCE_EPOCHS,
    AdamW,
    CheckpointError,
    CheckpointVersionError,
    ConfigFileError,
    Corpus,
    TrainConfig,
    checkpoint_from,
    clip_grad_norm,
    epoch_sweep,
    evaluate_model,
    format_table,
    load_checkpoint,
    load_config,
    parse_config,
    restore_rng,
    run_ablations,
    save_checkpoint,
    train,
)
from joint_nlu.wordpiece import tokenize_word

# desk-scale settings; the default lr is too small to move a randomly initialised toy model quickly
FAST = TrainConfig(lr=1e-3, epochs=3)


@pytest.fixture(scope="module")
def trained(corpus):
    return train(corpus, FAST)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.beta, cfg.lr) == (0.7, 5e-5)
        assert REFERENCE_BATCH_SIZE == 256 and cfg.batch_size == 16
        assert REFERENCE_EPOCHS == (10, 30, 40, 60, 80, 100)
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay) == (0.9, 0.999, 1e-8, 0.01)

    @pytest.mark.parametrize("bad", [{"lr": -1e-3}, {"epochs": 0}, {"beta": 1.2}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_parse(self):
        cfg = parse_config("# toy\nlr = 0.001\nepochs=4\nuse_saa = false\nactivation = gelu\n")
        assert (cfg.lr, cfg.epochs, cfg.use_saa, cfg.activation) == (1e-3, 4, False, "gelu")

    def test_round_trip_text(self):
        cfg = dataclasses.replace(FAST, seed=9, slot_only=True)
        assert parse_config(cfg.to_text()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigFileError, match="lerning_rate"):
            parse_config("lerning_rate = 1\n")

    def test_bad_value_and_line(self):
        with pytest.raises(ConfigFileError, match="line 2"):
            parse_config("lr = 0.1\nepochs = many\n")
        with pytest.raises(ConfigFileError):
            parse_config("just words\n")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigFileError):
            load_config(tmp_path / "nope.cfg")


class TestOptimizer:
    def test_zero_lr_epoch_leaves_params(self, corpus):
        cfg = dataclasses.replace(FAST, epochs=1, lr=0.0)
        model = JointModel(cfg.model_config(len(corpus.vocab), corpus.catalog), seed=0)
        before = {k: p.data.copy() for k, p in model.params.items()}
        result = train(corpus, cfg, model=model)
        assert result.steps == 4
        for k, p in result.final_model.params.items():
            assert np.abs(p.data - before[k]).max() <= 1e-15

    def test_decoupled_decay_with_zero_grad(self):
        theta = np.array([1.0, -2.0, 0.5])
        p = parameter(theta.copy())
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.01)
        p.grad = np.zeros(3)
        opt.step()
        np.testing.assert_allclose(p.data, theta - 0.1 * 0.01 * theta, rtol=0, atol=1e-15)

    def test_first_step_moves_by_lr(self):
        p = parameter(np.array([0.0, 0.0]))
        opt = AdamW({"p": p}, lr=0.01, weight_decay=0.0)
        p.grad = np.array([3.0, -0.5])
        opt.step()
        # bias-corrected Adam makes the first step +-lr in each coordinate
        np.testing.assert_allclose(p.data, [-0.01, 0.01], atol=1e-9)

    def test_clip_grad_norm(self):
        a, b = parameter(np.zeros(2)), parameter(np.zeros(1))
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        total = clip_grad_norm({"a": a, "b": b}, 1.0)
        assert total == 5.0
        norm = np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum())
        assert norm == pytest.approx(1.0, abs=1e-12)


class TestTraining:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_decreases(self, corpus, seed):
        result = train(corpus, dataclasses.replace(FAST, epochs=5, seed=seed))
        losses = [r.train_loss for r in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_deterministic(self, corpus, trained):
        again = train(corpus, FAST)
        assert [r.train_loss for r in again.history] == [r.train_loss for r in trained.history]
        a = evaluate_model(trained.model, corpus.test, corpus.vocab, corpus.catalog)
        b = evaluate_model(again.model, corpus.test, corpus.vocab, corpus.catalog)
        assert a == b

    def test_best_checkpoint_is_best(self, corpus, trained):
        best = max(r.valid.overall_acc for r in trained.history)
        got = evaluate_model(trained.model, corpus.valid, corpus.vocab, corpus.catalog)
        assert got.overall_acc == best
        assert trained.history[trained.best_epoch - 1].valid.overall_acc == best

    def test_early_stop_hook(self, corpus):
        result = train(corpus, dataclasses.replace(FAST, epochs=10), on_epoch=lambda r: r.epoch == 2)
        assert len(result.history) == 2

    def test_non_finite_loss_aborts(self, corpus):
        model = JointModel(FAST.model_config(len(corpus.vocab), corpus.catalog), seed=0)
        model.params["slot.b"].data[:] = np.nan
        with pytest.raises(NumericError, match="step 0"):
            train(corpus, FAST, model=model)

    def test_slot_only_selects_by_slot_f1(self, corpus):
        result = train(corpus, dataclasses.replace(FAST, slot_only=True))
        best = max(r.valid.slot_f1 for r in result.history)
        assert result.history[result.best_epoch - 1].valid.slot_f1 == best

    def test_linear_decay_runs(self, corpus):
        result = train(corpus, dataclasses.replace(FAST, epochs=1, lr_decay="linear"))
        assert result.steps == 4


class TestSweeps:
    def test_single_budget(self, corpus):
        rows = epoch_sweep(corpus, dataclasses.replace(FAST, epochs=1), [1])
        assert len(rows) == 1 and rows[0][0] == 1

    def test_longer_budget_not_worse(self, corpus):
        wins = 0
        for seed in range(3):
            rows = dict(epoch_sweep(corpus, dataclasses.replace(FAST, seed=seed), [2, 4]))
            wins += rows[4].slot_f1 >= rows[2].slot_f1
        assert wins >= 2

    def test_empty_list(self, corpus):
        with pytest.raises(ValueError):
            epoch_sweep(corpus, FAST, [])

    def test_ablation_rows_and_table(self, corpus):
        rows = run_ablations(corpus, dataclasses.replace(FAST, epochs=1), ["full", "slot only"])
        table = format_table(rows, "variant").splitlines()
        assert table[0].split("\t")[0] == "variant"
        slot_only = table[2].split("\t")
        assert slot_only[0] == "slot only" and slot_only[1] == "-" and slot_only[5] == "-"
        assert slot_only[4] != "-"

    def test_unknown_variant(self, corpus):
        with pytest.raises(ValueError, match="unknown ablation"):
            run_ablations(corpus, FAST, ["w/o everything"])

    def test_saa_inert_on_single_piece_corpus(self, corpus, vocab):
        simple = [u for u in corpus.train + corpus.valid + corpus.test
                  if all(len(tokenize_word(w, vocab)) == 1 for w in u.words)]
        small = Corpus(simple, simple, simple, vocab, build_catalog(simple))
        rows = dict(run_ablations(small, dataclasses.replace(FAST, epochs=2), ["full", "w/o SAA"]))
        assert rows["full"] == rows["w/o SAA"]


class TestCheckpoint:
    def test_round_trip_bitwise(self, corpus, trained, tmp_path):
        ckpt = checkpoint_from(trained, FAST, corpus)
        save_checkpoint(ckpt, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.train_config == FAST
        assert back.model_config == trained.model.cfg
        assert back.label_catalog().to_dict() == corpus.catalog.to_dict()
        from joint_nlu.dataset import batch_iter
        batch = batch_iter(corpus.test, corpus.vocab, corpus.catalog, 64)[0][0]
        with T.no_grad():
            a = trained.model.forward(batch)
            b = back.build_model().forward(batch)
        assert a.slot_logits.data.tobytes() == b.slot_logits.data.tobytes()
        assert a.intent_logits.data.tobytes() == b.intent_logits.data.tobytes()

    def test_rng_state_restored(self, corpus, trained, tmp_path):
        save_checkpoint(checkpoint_from(trained, FAST, corpus, "last"), tmp_path / "m.ckpt")
        rng = restore_rng(load_checkpoint(tmp_path / "m.ckpt").rng_state)
        state = trained.rng.bit_generator.state
        assert rng.bit_generator.state == state

    def test_size_bound(self, corpus, trained, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(checkpoint_from(trained, FAST, corpus), path)
        payload = trained.model.num_parameters() * 8
        size = path.stat().st_size
        assert payload < size < payload + 64 * 1024

    def test_truncated(self, corpus, trained, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(checkpoint_from(trained, FAST, corpus), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupt_byte(self, corpus, trained, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(checkpoint_from(trained, FAST, corpus), path)
        data = bytearray(path.read_bytes())
        data[-100] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_version_mismatch(self, corpus, trained, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(checkpoint_from(trained, FAST, corpus), path)
        data = bytearray(path.read_bytes())
        data[8] = 2
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"hello world, definitely not a model")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


def test_corpus_accepts_dev_dir(tmp_path, vocab):
    for split in ("train", "dev"):
        d = tmp_path / split
        d.mkdir()
        (d / "seq.in").write_text("play music\n")
        (d / "seq.out").write_text("O O\n")
        (d / "label").write_text("play_music\n")
    c = Corpus.from_dir(tmp_path, vocab)
    assert c.valid == [LabeledUtterance(("play", "music"), ("O", "O"), "play_music")]
    assert c.test == []
