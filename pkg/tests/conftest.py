import numpy as np
import pytest

from weakrank.corpus import build_corpus
from weakrank.index import build_index

# doc lengths 2, 4, 6 -> avg_dl 4; "cherry" is in B and C
HAND_DOCS = [
    ("A", "apple banana"),
    ("B", "apple cherry cherry date"),
    ("C", "banana cherry egg fig fig grape"),
]


def random_records(rng, n_docs=100, vocab=20, min_len=3, max_len=25):
    words = [f"w{i:02d}" for i in range(vocab)]
    recs = []
    for n in range(n_docs):
        length = int(rng.integers(min_len, max_len + 1))
        recs.append((f"d{n:03d}", " ".join(rng.choice(words, size=length))))
    return words, recs


def random_fixture(rng):
    """A random ranked list and graded judgments, some for unretrieved docs."""
    n_docs = int(rng.integers(1, 40))
    docs = [f"d{i}" for i in range(n_docs)]
    ranked = list(rng.permutation(docs)[: int(rng.integers(0, n_docs + 1))])
    judged = {}
    for d in docs + [f"x{i}" for i in range(int(rng.integers(0, 5)))]:
        if rng.random() < 0.4:
            judged[d] = int(rng.integers(0, 4))
    return ranked, judged


@pytest.fixture
def hand_corpus():
    return build_corpus(HAND_DOCS)


@pytest.fixture
def hand_index(hand_corpus):
    return build_index(hand_corpus)


@pytest.fixture
def random_index():
    rng = np.random.default_rng(1234)
    _, recs = random_records(rng)
    return build_index(build_corpus(recs))


@pytest.fixture
def small_index():
    """20-term vocabulary, 30 docs: the gradient-check fixture."""
    rng = np.random.default_rng(7)
    _, recs = random_records(rng, n_docs=30, vocab=20, min_len=4, max_len=12)
    return build_index(build_corpus(recs))


# acceptance criteria append "(number, status, detail)" here; printed at the end of the run
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, detail in sorted(CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {num:2d}: {status:4s} {detail}")
