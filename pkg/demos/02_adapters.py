"""
Pooling sub-tokens into words, words into an intent vector
==========================================================

Run the two attention adapters on random hidden states and look at the
weights they produce.
"""

import numpy as np

from joint_nlu import tensor as T
from joint_nlu.adapters import IaaParams, SaaParams, iaa_forward, saa_forward
from joint_nlu.wordpiece import AlignmentMap

rng = np.random.default_rng(0)
d = 8

# [CLS] w0 w1a w1b w1c w2 [SEP] : the middle word has three pieces
align = AlignmentMap(((1, 2), (2, 5), (5, 6)))
hidden = T.Tensor(rng.normal(size=(1, 7, d)))
saa_p = SaaParams(*(T.Tensor(rng.normal(0, 0.5, (d, d))) for _ in range(3)))
iaa_p = IaaParams(T.Tensor(rng.normal(0, 0.5, (d, d))))

with T.no_grad():
    saa = saa_forward(hidden, [align], saa_p)
    iaa = iaa_forward(hidden, saa, iaa_p)

for j in range(len(align)):
    print(f"word {j}: sub-token weights {np.round(saa.word_alpha(0, j), 4)}")
print("intent weights over words:", np.round(iaa.alpha[0], 4))

# single-piece words pass their hidden state through untouched
print("word 0 rep equals its hidden state:", np.array_equal(saa.reps.data[0, 0], hidden.data[0, 1]))

# switching the adapter off falls back to the first piece of every word
with T.no_grad():
    off = saa_forward(hidden, [align], saa_p, use_saa=False)
print("disabled: word 1 rep equals first piece:", np.array_equal(off.reps.data[0, 1], hidden.data[0, 2]))
