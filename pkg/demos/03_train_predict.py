"""
Train a toy joint model and query it
====================================

Train on the bundled synthetic corpus, score the test split, save and reload
a checkpoint, then predict and dump sub-word attention for a new utterance.
"""

import argparse
import tempfile
from pathlib import Path

from joint_nlu.adapters import format_attention
from joint_nlu.synthetic import bundled_dir, bundled_vocab_path
from joint_nlu.trainer import (Corpus, TrainConfig, checkpoint_from, evaluate_model,
                               load_checkpoint, save_checkpoint, train)
from joint_nlu.wordpiece import WordpieceVocab

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--epochs", type=int, default=40)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

vocab = WordpieceVocab.from_file(bundled_vocab_path())
corpus = Corpus.from_dir(bundled_dir(), vocab)
print(f"{len(corpus.train)} train / {len(corpus.valid)} valid / {len(corpus.test)} test utterances, "
      f"{corpus.catalog.n_intents} intents, {corpus.catalog.n_slots} slot tags")

# the toy model is randomly initialised, so use a larger step than the default
cfg = TrainConfig(lr=1e-3, epochs=args.epochs, seed=args.seed)
result = train(corpus, cfg)
for rec in result.history[:: max(1, len(result.history) // 8)]:
    print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  valid overall {rec.valid.overall_acc:.3f}")
print("best epoch", result.best_epoch)

report = evaluate_model(result.model, corpus.test, vocab, corpus.catalog)
print(report.summary())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "best.ckpt"
    save_checkpoint(checkpoint_from(result, cfg, corpus), path)
    print(f"checkpoint {path.stat().st_size} bytes for {result.model.num_parameters()} parameters")
    model = load_checkpoint(path).build_model()

pred = model.predict("play some lossless jazz by nina", vocab, corpus.catalog)
print(pred.format())
print(format_attention(pred.attention))
