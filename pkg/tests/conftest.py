import numpy as np
import pytest

from lipgec.ctc import EmissionLattice


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_random_lattice(rng, n_frames, vocab_size, spread=1.5):
    logits = rng.standard_normal((n_frames, vocab_size + 1)) * spread
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return EmissionLattice(np.log(probs), tuple("abcdefgh"[:vocab_size]))
