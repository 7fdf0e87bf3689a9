import numpy as np
import pytest

from enhance.consensus import Canvas, ConsensusState, ObservedImage

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(rng, canvas, max_votes=0):
    P = canvas.size
    ranks = rng.permutation(P).astype(np.int64) + 1
    votes = rng.integers(0, max_votes + 1, size=P).astype(np.float64) if max_votes else np.zeros(P)
    return ConsensusState(canvas, ranks, votes)


def random_image(rng, canvas, levels=5, min_masked=2):
    """Random quantized image with a random mask covering >= min_masked pixels."""
    P = canvas.size
    values = rng.integers(0, levels, size=P).astype(np.float64)
    mask = rng.random(P) < rng.uniform(0.2, 1.0)
    if mask.sum() < min_masked:
        mask[rng.choice(P, size=min_masked, replace=False)] = True
    return ObservedImage(canvas, values, mask)
