import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from joint_nlu import synthetic  # noqa: E402
from joint_nlu.trainer import Corpus  # noqa: E402
from joint_nlu.wordpiece import SPECIAL_TOKENS, WordpieceVocab  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def vocab():
    return WordpieceVocab.from_file(synthetic.bundled_vocab_path())


@pytest.fixture(scope="session")
def corpus(vocab):
    return Corpus.from_dir(synthetic.bundled_dir(), vocab)


@pytest.fixture(scope="session")
def piece_vocab():
    """Small vocab holding the pieces for the worked tokenization examples."""
    tokens = list(SPECIAL_TOKENS) + """my phone is a music play ##ing loss ##less th ##ir ##tie ##th
    what the flight from to on june red ##bre ##ast earliest memphis cincinnati""".split()
    return WordpieceVocab(tokens)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    lines = [value for reports in terminalreporter.stats.values() for rep in reports
             for key, value in getattr(rep, "user_properties", ()) if key == "acceptance"
             and getattr(rep, "when", "call") == "call"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
