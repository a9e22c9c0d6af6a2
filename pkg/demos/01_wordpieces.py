"""
Wordpieces and word alignment
=============================

Split words into vocabulary pieces and see which sub-token span each word
occupies once [CLS] and [SEP] are added.
"""

from joint_nlu.synthetic import bundled_vocab_path, generate
from joint_nlu.wordpiece import WordpieceVocab, corpus_subword_stats, tokenize_utterance, tokenize_word

# a tiny hand-made vocabulary; continuation pieces carry the ## prefix
vocab = WordpieceVocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "my", "phone", "is", "a", "music",
                        "play", "##ing", "loss", "##less", "th", "##ir", "##tie", "##th"])

for word in ["playing", "lossless", "thirtieth", "music", "xylophone"]:
    print(f"{word:10s} -> {tokenize_word(word, vocab)}")

# whole utterance: spans are half-open and count [CLS] as position 0
tok = tokenize_utterance("my phone is playing a lossless music".split(), vocab)
print(" ".join(tok.pieces))
for j, word in enumerate(tok.words):
    print(f"  {word:9s} {tok.alignment.spans[j]}  {tok.word_pieces(j)}")
print("multi-piece words:", [tok.words[j] for j in tok.alignment.complex_words()])

# how much of the bundled toy corpus needs more than one piece per word
big = WordpieceVocab.from_file(bundled_vocab_path())
stats = corpus_subword_stats(generate(64, 1), big)
print(f"bundled train split: {stats.n_multi_piece}/{stats.n_words} words are multi-piece, "
      f"{stats.distinct_subwords} distinct pieces inside them")
