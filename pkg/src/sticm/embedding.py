"""Delay embedding of the target variable and the estimate-matrix bookkeeping.

Time indices in public helpers are 1-based, as in the usual way of writing
``y^1 ... y^m``. Arrays are 0-based; :func:`time_index` is the single place
where the two meet. Row ``j`` / column ``t`` of an L x m delay matrix holds
the target at time ``t + j - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid run or model configuration."""


@dataclass
class SeriesMatrix:
    """n variables observed at m time points, stored as an (n, m) array."""

    values: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"series matrix must be 2-D, got shape {self.values.shape}")
        if not self.names:
            self.names = [f"x{i + 1}" for i in range(self.values.shape[0])]
        if len(self.names) != self.values.shape[0]:
            raise ValueError(f"{len(self.names)} names for {self.values.shape[0]} variables")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series matrix contains missing or non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def rows(self, indices: Sequence[int]) -> "SeriesMatrix":
        idx = list(indices)
        return SeriesMatrix(self.values[idx], [self.names[i] for i in idx])

    def head(self, m: int) -> "SeriesMatrix":
        """First ``m`` time points."""
        return SeriesMatrix(self.values[:, :m], list(self.names))

    def index_of(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            i = int(name_or_index)
            if not 0 <= i < self.n:
                raise ConfigError(f"target index {i} out of range for {self.n} variables")
            return i
        try:
            return self.names.index(str(name_or_index))
        except ValueError:
            raise ConfigError(f"no variable named {name_or_index!r}") from None


@dataclass
class DelayMatrix:
    """Target delay matrix: ``entries[j-1, t-1] = y^{t+j-1}`` where known."""

    entries: np.ndarray
    known: np.ndarray

    @property
    def L(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    def unknown_times(self) -> list[int]:
        return sorted({time_index(j + 1, t + 1, self.L, self.m) for j, t in zip(*np.nonzero(~self.known))})


def time_index(j: int, t: int, L: int | None = None, m: int | None = None) -> int:
    """Time (1-based) estimated by row ``j`` at column ``t``: ``t + j - 1``."""
    if j < 1 or t < 1 or (L is not None and j > L) or (m is not None and t > m):
        raise IndexError(f"(j={j}, t={t}) outside the {L} x {m} estimate matrix")
    return t + j - 1


def known_mask(L: int, m: int) -> np.ndarray:
    j = np.arange(L)[:, None]
    t = np.arange(m)[None, :]
    return (t + j) < m


def build_delay_matrix(series, L: int) -> DelayMatrix:
    """Embed a length-m target series into an L x m delay matrix.

    Entries reaching past time m are unknown; they are stored as zeros and
    masked out.
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    m = y.size
    if not 2 <= L <= m:
        raise ConfigError(f"embedding dimension L={L} must satisfy 2 <= L <= m={m}")
    mask = known_mask(L, m)
    j = np.arange(L)[:, None]
    t = np.arange(m)[None, :]
    idx = np.minimum(t + j, m - 1)
    entries = np.where(mask, y[idx], 0.0)
    return DelayMatrix(entries, mask)


def check_embedding_dimension(L: int, n: int, attractor_dim: float | None = None) -> None:
    """Require ``n > L > 1`` and, when the attractor dimension is known, ``L > 2d``."""
    if not 1 < L < n:
        raise ConfigError(f"need n > L > 1, got n={n}, L={L}")
    if attractor_dim is not None and not L > 2 * attractor_dim:
        raise ConfigError(f"L={L} must exceed twice the attractor dimension {attractor_dim}")


def future_cells(L: int, m: int) -> list[tuple[int, list[tuple[int, int]]]]:
    """For each future time m+i, the 0-based (row, col) cells that estimate it."""
    groups = []
    for i in range(1, L):
        cells = [(j - 1, m + i - j) for j in range(i + 1, L + 1)]
        groups.append((m + i, cells))
    return groups


def future_estimate_groups(est: np.ndarray) -> dict[int, list[tuple[int, float]]]:
    """Map each future time ``m+i`` to its ``(row j, value)`` estimates (j 1-based)."""
    L, m = est.shape
    return {tau: [(r + 1, float(est[r, c])) for r, c in cells] for tau, cells in future_cells(L, m)}


def future_index_arrays(L: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat (rows, cols, group) index arrays over all L(L-1)/2 future cells."""
    rows, cols, grp = [], [], []
    for g, (_, cells) in enumerate(future_cells(L, m)):
        for r, c in cells:
            rows.append(r)
            cols.append(c)
            grp.append(g)
    return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(grp, dtype=int)


def extract_predictions(est: np.ndarray) -> np.ndarray:
    """Average every estimate of each future time; returns L-1 values in time order."""
    est = np.asarray(est, dtype=np.float64)
    L, m = est.shape
    out = np.empty(L - 1)
    for i in range(1, L):
        rows = np.arange(i, L)
        cols = m + i - 1 - rows
        out[i - 1] = est[rows, cols].mean()
    return out


def self_constraint_times(L: int, m: int) -> set[int]:
    """Times tied together by at least one neighbouring-row constraint.

    Cells (j, t) and (j-1, t+1) estimate the same time; every such time is one
    temporal self-constraint. ``m - 1`` of them lie in the observed window and
    ``L - 2`` in the future, ``m + L - 3`` in all.
    """
    times = set()
    for j in range(2, L + 1):
        for t in range(1, m):
            times.add(time_index(j, t, L, m))
    return times
