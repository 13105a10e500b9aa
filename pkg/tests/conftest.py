from __future__ import annotations

import numpy as np
import pytest

from mpiv import ObservedSample, PairStructure
from mpiv.pairing import _assign_with, match_pairs_scalar


def random_instance(rng: np.random.Generator, n_pairs: int, k_w: int = 2,
                    shuffle_pairs: bool = True) -> tuple[ObservedSample, PairStructure]:
    """Random balanced design with heterogeneous take-up and outcomes.

    Take-up has both arms mixed so the first stage stays away from zero.
    """
    m = 2 * n_pairs
    x = rng.normal(size=m)
    w = rng.normal(size=(m, k_w)) + 0.3 * x[:, None]
    if shuffle_pairs:
        perm = rng.permutation(m)
        structure = PairStructure(perm.reshape(-1, 2), rng.permutation(n_pairs))
    else:
        structure = match_pairs_scalar(x)
    for _ in range(100):
        a = _assign_with(structure.pairs, rng)
        d = np.where(a == 1, rng.random(m) < 0.8, rng.random(m) < 0.2).astype(float)
        fs = (d[a == 1].sum() - d[a == 0].sum()) / n_pairs
        if abs(fs) > 0.05:
            break
    y = 1.0 + x + w.sum(axis=1) + 2.0 * d + rng.normal(size=m) * (1 + 0.5 * np.abs(x))
    return ObservedSample(y=y, d=d, a=a, x=x[:, None], w=w), structure


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def micro() -> tuple[ObservedSample, PairStructure]:
    """Two pairs worked out by hand: LATE estimate 2, zero within-pair spread."""
    sample = ObservedSample(y=[3.0, 1.0, 2.0, 2.0], d=[1, 0, 0, 0], a=[1, 0, 1, 0],
                            x=[0.1, 0.2, 0.3, 0.4], w=np.zeros((4, 0)))
    structure = PairStructure([[0, 1], [2, 3]], [0, 1])
    return sample, structure
