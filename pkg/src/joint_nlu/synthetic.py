"""Deterministic toy corpus with many multi-piece words, plus its wordpiece vocab.

Four intents, six slot types. Slot fillers are built so that words of
different types can share a first piece (``red`` in ``redbreast`` and
``redmond``), which makes the non-first pieces matter for tagging.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import LabeledUtterance
from .wordpiece import SPECIAL_TOKENS, WordpieceVocab, tokenize_word

WHOLE_WORDS = """
a an at by for from in is it me my of on phone play set some the to up
what will wake book music rain be
june july monday friday delta united jazz boston seven nine
""".split()

PIECES = """
th ##ir ##tie ##th play ##ing loss ##less red ##bre ##ast ##mond cold ##play
mem ##phis cin ##nati den ##ver ##cin ##liest ear tom ##orrow ele ##ven
lu ##ft ##hansa class ##ical ac ##ous ##tic sun ##day fif ##teen
blue ##grass ##wood sky ##lark snow ##bird ##line air ##ways
tw ##el ##ve wea ##ther al ##arm fl ##ight song ##s pl ##ease
""".split()

FILLERS = {
    "artist": [["redbreast"], ["coldplay"], ["skylark"], ["snowbird"], ["bluegrass", "redbreast"]],
    "music_type": [["lossless"], ["classical"], ["acoustic"], ["jazz"], ["bluegrass"]],
    "city": [["memphis"], ["cincinnati"], ["denver"], ["redmond"], ["boston"], ["redwood"]],
    "date": [["june", "thirtieth"], ["tomorrow"], ["sunday"], ["july", "fifteenth"], ["monday"]],
    "time": [["eleven"], ["seven"], ["twelve"], ["nine"], ["fifteen"]],
    "airline": [["lufthansa"], ["delta"], ["skyways"], ["united"], ["airline"]],
}

# (intent, template); {slot} placeholders expand to B-/I- tagged filler words
TEMPLATES = [
    ("play_music", "play {artist}"),
    ("play_music", "my phone is playing a {music_type} music"),
    ("play_music", "play some {music_type} songs by {artist}"),
    ("play_music", "please play {artist} on my phone"),
    ("get_weather", "what is the weather in {city} {date}"),
    ("get_weather", "will it rain in {city} on {date}"),
    ("get_weather", "weather for {city} please"),
    ("book_flight", "what is the earliest flight from {city} to {city} on {date}"),
    ("book_flight", "book a {airline} flight to {city}"),
    ("book_flight", "book a flight from {city} to {city} by {airline}"),
    ("set_alarm", "set an alarm for {time} {date}"),
    ("set_alarm", "wake me up at {time}"),
    ("set_alarm", "set alarm at {time} on {date} please"),
]


def build_vocab() -> WordpieceVocab:
    tokens = list(SPECIAL_TOKENS)
    for t in WHOLE_WORDS + PIECES:
        if t not in tokens:
            tokens.append(t)
    return WordpieceVocab(tokens)


def _expand(template: str, rng: np.random.Generator):
    words, tags = [], []
    for tok in template.split():
        if tok.startswith("{"):
            slot = tok[1:-1]
            options = FILLERS[slot]
            filler = options[rng.integers(len(options))]
            for i, w in enumerate(filler):
                words.append(w)
                tags.append(("B-" if i == 0 else "I-") + slot)
        else:
            words.append(tok)
            tags.append("O")
    return words, tags


def generate(n: int, seed: int) -> list[LabeledUtterance]:
    """``n`` utterances cycling through the templates with random fillers."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(np.arange(n) % len(TEMPLATES))
    out = []
    for t in order:
        intent, template = TEMPLATES[t]
        words, tags = _expand(template, rng)
        out.append(LabeledUtterance(tuple(words), tuple(tags), intent))
    return out


SPLITS = {"train": (64, 1), "valid": (32, 2), "test": (48, 3)}


def write_corpus(root) -> None:
    """Write the vocab and the three splits in seq.in / seq.out / label layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    build_vocab().save(root / "vocab.txt")
    for split, (n, seed) in SPLITS.items():
        d = root / split
        d.mkdir(exist_ok=True)
        utts = generate(n, seed)
        (d / "seq.in").write_text("".join(" ".join(u.words) + "\n" for u in utts), encoding="utf-8")
        (d / "seq.out").write_text("".join(" ".join(u.slot_labels) + "\n" for u in utts), encoding="utf-8")
        (d / "label").write_text("".join(u.intent + "\n" for u in utts), encoding="utf-8")


def bundled_dir() -> Path:
    return Path(__file__).parent / "data" / "synthetic"


def bundled_vocab_path() -> Path:
    return bundled_dir() / "vocab.txt"


def unknown_pieces(vocab: WordpieceVocab) -> list[str]:
    """Corpus words that fall back to [UNK] under ``vocab`` (should be empty)."""
    words = {w for t in TEMPLATES for w in t[1].split() if not w.startswith("{")}
    words |= {w for fs in FILLERS.values() for f in fs for w in f}
    return sorted(w for w in words if tokenize_word(w, vocab) == ["[UNK]"])
