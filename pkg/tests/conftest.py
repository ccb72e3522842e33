import numpy as np
import pytest

from dsrefine.mixer import MixSpec, simulate_corpus
from dsrefine.synth import write_pools


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pools(tmp_path_factory):
    root = tmp_path_factory.mktemp("pools")
    return write_pools(root, n_clean=6, seed=3, seconds=0.5)


@pytest.fixture(scope="session")
def small_corpus(pools, tmp_path_factory):
    """Six half-second mixtures at randomized Table-1 SNRs."""
    out = tmp_path_factory.mktemp("mix")
    rows = simulate_corpus(*pools, MixSpec(snr_mode="randomized", seed=11), out)
    return out, rows
