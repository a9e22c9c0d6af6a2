"""
Ablations and epoch budgets
===========================

Train the model variants from the same seed and compare them, then repeat the
full model under the reference list of epoch budgets.
"""

import argparse
import dataclasses

from joint_nlu.synthetic import bundled_dir, bundled_vocab_path
from joint_nlu.trainer import REFERENCE_EPOCHS, Corpus, TrainConfig, epoch_sweep, format_table, run_ablations
from joint_nlu.model import ABLATIONS
from joint_nlu.wordpiece import WordpieceVocab

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--seeds", type=int, default=1)
parser.add_argument("--epochs", type=int, default=60, help="budget for the ablation runs")
parser.add_argument("--jobs", type=int, default=1)
args = parser.parse_args()

vocab = WordpieceVocab.from_file(bundled_vocab_path())
corpus = Corpus.from_dir(bundled_dir(), vocab)
cfg = TrainConfig(lr=1e-3, epochs=args.epochs)

for seed in range(args.seeds):
    rows = run_ablations(corpus, dataclasses.replace(cfg, seed=seed), list(ABLATIONS), jobs=args.jobs)
    print(f"seed {seed}")
    print(format_table(rows, "variant"))

# one independent run per budget; the first few budgets are too short to fit the toy data
print(f"epoch budgets {list(REFERENCE_EPOCHS)}")
print(format_table(epoch_sweep(corpus, cfg, REFERENCE_EPOCHS, jobs=args.jobs), "epochs"))
