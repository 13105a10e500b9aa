"""Observed-data and design-structure containers plus CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ObservedSample",
    "PairStructure",
    "LateReport",
    "SampleValidationError",
    "validate_sample",
    "read_csv_rows",
    "write_sample",
    "sample_to_rows",
]


class SampleValidationError(ValueError):
    """Raised when raw rows violate the sample invariants.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservedSample:
    """Per-unit observed data for ``2n`` units.

    Attributes
    ----------
    y : ndarray, shape (2n,)
        Outcomes.
    d : ndarray, shape (2n,)
        Take-up indicators in {0, 1}.
    a : ndarray, shape (2n,)
        Assignment indicators in {0, 1}.
    x : ndarray, shape (2n, k_x)
        Covariates used for matching.
    w : ndarray, shape (2n, k_w)
        Covariates reserved for adjustment; ``k_w`` may be zero.
    unit_id : tuple of str, optional
        Carried through to reports, never used in computation.
    """

    y: np.ndarray
    d: np.ndarray
    a: np.ndarray
    x: np.ndarray
    w: np.ndarray
    unit_id: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).reshape(-1)
        m = y.shape[0]
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if x.ndim == 1:
            x = x.reshape(m, -1) if x.size else np.zeros((m, 0))
        if w.ndim == 1:
            w = w.reshape(m, -1) if w.size else np.zeros((m, 0))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float).reshape(-1)

        problems = []
        for name, arr in (("d", d), ("a", a), ("x", x), ("w", w)):
            if arr.shape[0] != m:
                problems.append(f"{name} has {arr.shape[0]} rows, expected {m}")
        if m % 2:
            problems.append("row count must be even")
        if m < 4:
            problems.append(f"need at least 4 units (2 pairs), got {m}")
        if problems:
            raise SampleValidationError(problems)
        for name, arr in (("d", d), ("a", a)):
            if not np.all((arr == 0) | (arr == 1)):
                problems.append(f"{name} not binary")
        for name, arr in (("y", y), ("x", x), ("w", w)):
            if not np.all(np.isfinite(arr)):
                problems.append(f"{name} has non-finite values")
        if self.unit_id is not None and len(self.unit_id) != m:
            problems.append("unit_id length mismatch")
        if problems:
            raise SampleValidationError(problems)

        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "w", _frozen(w))
        if self.unit_id is not None:
            object.__setattr__(self, "unit_id", tuple(str(u) for u in self.unit_id))

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.y.shape[0] // 2

    def with_assignment(self, a: np.ndarray, d: np.ndarray | None = None,
                        y: np.ndarray | None = None) -> ObservedSample:
        return ObservedSample(
            y=self.y if y is None else y,
            d=self.d if d is None else d,
            a=a,
            x=self.x,
            w=self.w,
            unit_id=self.unit_id,
        )


@dataclass(frozen=True)
class PairStructure:
    """Partition of ``2n`` units into ``n`` pairs, plus an ordering of pairs.

    Indices are 0-based row positions. ``pairs[j]`` holds the two units of
    pair ``j``; ``pair_order`` lists pair indices so that consecutive entries
    ``(pair_order[2k], pair_order[2k+1])`` form a pair-of-pairs block.
    """

    pairs: np.ndarray
    pair_order: np.ndarray
    order_source: str = "matcher"

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.intp)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("pairs must have shape (n, 2)")
        n = pairs.shape[0]
        if n < 1:
            raise ValueError("need at least one pair")
        flat = np.sort(pairs.reshape(-1))
        if not np.array_equal(flat, np.arange(2 * n)):
            raise ValueError("pairs must partition the unit indices 0..2n-1")
        order = np.asarray(self.pair_order, dtype=np.intp).reshape(-1)
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("pair_order must be a permutation of 0..n-1")
        object.__setattr__(self, "pairs", _frozen(pairs))
        object.__setattr__(self, "pair_order", _frozen(order))

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]

    @property
    def n_units(self) -> int:
        return 2 * self.pairs.shape[0]

    @property
    def ordered_pairs(self) -> np.ndarray:
        """Pairs rearranged by ``pair_order``, shape (n, 2)."""
        return self.pairs[self.pair_order]

    def pair_ids(self) -> np.ndarray:
        """Pair index of every unit, shape (2n,)."""
        ids = np.empty(self.n_units, dtype=np.intp)
        ids[self.pairs[:, 0]] = np.arange(self.n_pairs)
        ids[self.pairs[:, 1]] = np.arange(self.n_pairs)
        return ids

    @classmethod
    def from_pair_ids(cls, pair_ids: Sequence[Any], x: np.ndarray | None = None) -> PairStructure:
        """Build a structure from a per-unit pair label column.

        Pairs are ordered by the within-pair mean of the first column of
        ``x`` when given (``order_source="x1_mean"``), otherwise by first
        appearance in the file.
        """
        groups: dict[Any, list[int]] = {}
        for i, pid in enumerate(pair_ids):
            groups.setdefault(pid, []).append(i)
        bad = [str(k) for k, v in groups.items() if len(v) != 2]
        if bad:
            raise SampleValidationError(
                [f"pair_id {k} does not have exactly two units" for k in bad])
        pairs = np.array(list(groups.values()), dtype=np.intp)
        if x is not None and np.asarray(x).size:
            key = np.asarray(x, dtype=float).reshape(len(pair_ids), -1)[:, 0]
            order = np.argsort(key[pairs].mean(axis=1), kind="stable")
            return cls(pairs, order, order_source="x1_mean")
        return cls(pairs, np.arange(len(pairs)), order_source="file")


@dataclass
class LateReport:
    """Estimates, variances and tests for one analysis run.

    ``variances`` are for ``sqrt(n) * (estimate - LATE)``; the standard
    error of the estimate is ``sqrt(variance / n_pairs)``.
    """

    delta_hat: float
    first_stage: float
    n_pairs: int
    variances: dict[str, float] = field(default_factory=dict)
    tests: dict[str, list[Any]] = field(default_factory=dict)
    delta_hat_adj: float | None = None
    first_stage_adj: float | None = None
    notes: list[str] = field(default_factory=list)

    def standard_errors(self) -> dict[str, float]:
        return {k: math.sqrt(v / self.n_pairs) for k, v in self.variances.items()}


_REQUIRED = ("y", "d", "a")


def _to_float(value: Any) -> float:
    if value is None:
        raise ValueError("missing")
    if isinstance(value, str):
        value = value.strip()
        if value == "":
            raise ValueError("missing")
    return float(value)


def _numbered(columns: Iterable[str], prefix: str) -> list[str]:
    cols = [c for c in columns if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def validate_sample(rows: Sequence[Mapping[str, Any]]) -> ObservedSample:
    """Validate tabular records and build an :class:`ObservedSample`.

    Every violated invariant is collected and reported together in a
    :class:`SampleValidationError`. Row numbers in messages are 1-based
    data rows (the header is not counted).
    """
    rows = list(rows)
    problems: list[str] = []
    if not rows:
        raise SampleValidationError(["no data rows"])
    header = list(rows[0].keys())
    for col in _REQUIRED:
        if col not in header:
            problems.append(f"missing required column {col!r}")
    if problems:
        raise SampleValidationError(problems)
    xcols = _numbered(header, "x")
    wcols = _numbered(header, "w")
    numeric = list(_REQUIRED) + xcols + wcols

    values = np.full((len(rows), len(numeric)), np.nan)
    for r, row in enumerate(rows, start=1):
        if set(row.keys()) != set(header) or None in row.values():
            problems.append(f"ragged row at row {r}")
            continue
        for c, name in enumerate(numeric):
            try:
                v = _to_float(row[name])
            except (TypeError, ValueError):
                problems.append(f"{name} not numeric at row {r}")
                continue
            if not math.isfinite(v):
                problems.append(f"{name} not finite at row {r}")
            elif name in ("d", "a") and v not in (0.0, 1.0):
                problems.append(f"{name} not binary at row {r}")
            values[r - 1, c] = v

    m = len(rows)
    if m % 2:
        problems.append("row count must be even")
    if m < 4:
        problems.append(f"need at least 4 rows, got {m}")
    if problems:
        raise SampleValidationError(problems)

    unit_id = None
    if "unit_id" in header:
        unit_id = tuple(str(row["unit_id"]) for row in rows)
    k = 3 + len(xcols)
    return ObservedSample(
        y=values[:, 0],
        d=values[:, 1],
        a=values[:, 2],
        x=values[:, 3:k],
        w=values[:, k:],
        unit_id=unit_id,
    )


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    """Read a UTF-8 CSV with header into a list of dicts.

    Rows with too many or too few fields are kept, with ``None`` marking
    the gaps, so that :func:`validate_sample` can report them as ragged.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, restval=None)
        rows = []
        for row in reader:
            extra = row.pop(None, None)
            if extra:
                row["__extra__"] = None
            rows.append(row)
    return rows


def sample_to_rows(sample: ObservedSample, extra: Mapping[str, Sequence[Any]] | None = None
                   ) -> list[dict[str, Any]]:
    cols: dict[str, Sequence[Any]] = {}
    if sample.unit_id is not None:
        cols["unit_id"] = sample.unit_id
    cols["y"] = sample.y
    cols["d"] = sample.d.astype(int)
    cols["a"] = sample.a.astype(int)
    for j in range(sample.x.shape[1]):
        cols[f"x{j + 1}"] = sample.x[:, j]
    for j in range(sample.w.shape[1]):
        cols[f"w{j + 1}"] = sample.w[:, j]
    if extra:
        cols.update(extra)
    out = []
    for i in range(sample.n_units):
        out.append({k: _fmt(v[i]) for k, v in cols.items()})
    return out


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        # repr round-trips doubles exactly
        return repr(float(v))
    return str(v)


def write_sample(sample: ObservedSample, path: str | Path | None = None,
                 extra: Mapping[str, Sequence[Any]] | None = None) -> list[dict[str, Any]]:
    """Serialize ``sample`` to CSV rows (and to ``path`` if given).

    Floats are written with ``repr`` so reading the file back reproduces
    every finite value bit for bit.
    """
    rows = sample_to_rows(sample, extra)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
