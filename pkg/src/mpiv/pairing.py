"""Pair formation, pair-of-pairs ordering and within-pair randomization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairStructure

__all__ = [
    "MatchReport",
    "match_pairs_scalar",
    "match_pairs_greedy",
    "match_report",
    "assign_treatment",
    "make_rng",
]


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by the given integers.

    ``make_rng(seed, rep)`` yields an independent Philox stream per
    replication, so results do not depend on scheduling.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class MatchReport:
    """Closeness diagnostics for a pairing.

    ``within_pair_l2`` is ``(mean distance, mean squared distance)`` over
    pairs. ``cross_pair_l2_sq`` holds, for each of the four cross
    combinations between the two pairs of a block, the mean squared
    distance over blocks.
    """

    structure: PairStructure
    within_pair_l2: tuple[float, float]
    cross_pair_l2_sq: tuple[float, float, float, float]

    def as_dict(self) -> dict:
        return {
            "n_pairs": self.structure.n_pairs,
            "order_source": self.structure.order_source,
            "within_pair_mean_l2": self.within_pair_l2[0],
            "within_pair_mean_l2_sq": self.within_pair_l2[1],
            "cross_pair_mean_l2_sq": list(self.cross_pair_l2_sq),
        }


def _as_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("covariates must be a vector or a 2-D matrix")
    if x.shape[0] % 2 or x.shape[0] < 2:
        raise ValueError(f"need an even, positive number of units, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates contain non-finite values")
    return x


def match_pairs_scalar(x: np.ndarray) -> PairStructure:
    """Sort units by a scalar covariate and pair adjacent units.

    Ties are broken by original row index. Pairs come out in ascending
    order of their smaller value, so adjacent pairs are adjacent on the
    line and consecutive pairs form the pair-of-pairs blocks.
    """
    x = _as_matrix(x)
    if x.shape[1] != 1:
        raise ValueError(f"match_pairs_scalar needs k_x = 1, got {x.shape[1]}")
    order = np.argsort(x[:, 0], kind="stable")
    pairs = order.reshape(-1, 2)
    return PairStructure(pairs, np.arange(pairs.shape[0]), order_source="sorted_x")


def _greedy_nn(points: np.ndarray) -> list[tuple[int, int]]:
    # Lowest unmatched index first, paired with its nearest unmatched
    # neighbour; distance ties go to the lower index.
    m = points.shape[0]
    dist = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    available = np.ones(m, dtype=bool)
    out = []
    for i in range(m):
        if not available[i]:
            continue
        available[i] = False
        if not available.any():
            break
        row = np.where(available, dist[i], np.inf)
        j = int(np.argmin(row))
        available[j] = False
        out.append((i, j))
    return out


def match_pairs_greedy(x: np.ndarray) -> PairStructure:
    """Greedy nearest-neighbour non-bipartite matching in Euclidean distance.

    Units are visited in row order; each unmatched unit is paired with its
    nearest unmatched unit. The same greedy rule applied to pair midpoints
    groups pairs into pair-of-pairs blocks. With an odd number of pairs the
    leftover pair is placed last.

    Covariates are used as given; rescale them beforehand if their units
    differ.
    """
    x = _as_matrix(x)
    pairs = np.array(_greedy_nn(x), dtype=np.intp)
    n = pairs.shape[0]
    mid = 0.5 * (x[pairs[:, 0]] + x[pairs[:, 1]])
    order: list[int] = []
    for p, q in _greedy_nn(mid):
        order.extend((p, q))
    seen = set(order)
    order.extend(k for k in range(n) if k not in seen)
    return PairStructure(pairs, np.array(order, dtype=np.intp), order_source="greedy_midpoints")


def match_report(x: np.ndarray, structure: PairStructure) -> MatchReport:
    """Compute the within-pair and pairs-of-pairs closeness diagnostics."""
    x = _as_matrix(x)
    pairs = structure.pairs
    dist = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
    within = (float(np.mean(dist)), float(np.mean(dist**2)))

    ordered = structure.ordered_pairs
    nb = ordered.shape[0] // 2
    if nb == 0:
        cross = (0.0, 0.0, 0.0, 0.0)
    else:
        first, second = ordered[0 : 2 * nb : 2], ordered[1 : 2 * nb : 2]
        cross = tuple(
            float(np.mean(np.sum((x[first[:, k]] - x[second[:, l]]) ** 2, axis=1)))
            for k in (0, 1)
            for l in (0, 1)
        )
    return MatchReport(structure, within, cross)  # type: ignore[arg-type]


def assign_treatment(structure: PairStructure, seed: int) -> np.ndarray:
    """Randomize exactly one treated unit per pair.

    Each pair independently gets ``(1, 0)`` or ``(0, 1)`` with probability
    one half. The result depends only on ``seed``.
    """
    rng = make_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return _assign_with(structure.pairs, rng)


def _assign_with(pairs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    first = rng.integers(0, 2, size=pairs.shape[0]).astype(float)
    a = np.empty(2 * pairs.shape[0])
    a[pairs[:, 0]] = first
    a[pairs[:, 1]] = 1.0 - first
    return a
