import numpy as np
import pytest

from config import CONFIG
from nn.adapter import AdapterSet, LowRankPair, init_adapter
from nn.linalg import gaussian_matrix


def random_pair(d_out: int, d_in: int, r: int, seed: int, scale: float = 1.0) -> LowRankPair:
    return LowRankPair(
        b=gaussian_matrix(d_out, r, scale, seed),
        a=gaussian_matrix(r, d_in, scale, seed + 1000),
    )


def nonzero_adapter(mode: str, d_model: int, r: int, seed: int, scale: float = 0.3) -> AdapterSet:
    """init_adapter with B redrawn so the adapter actually changes the forward."""
    fresh = init_adapter(mode, d_model, r, seed=seed)
    pairs = {
        slot: LowRankPair(b=gaussian_matrix(d_model, r, scale, seed + 100 + i), a=pair.a * scale)
        for i, (slot, pair) in enumerate(fresh.pairs().items())
    }
    return AdapterSet.from_pairs(mode, pairs)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def wall_time(monkeypatch):
    monkeypatch.setattr(CONFIG, "RECORD_WALL_TIME", True)
