"""Leave-one-out causal ranking of input variables and relation networks.

The reference model sees every variable. Each fold drops one non-target
variable and is retrained from the same seed; the increase in held-out
normalized RMSE, ``eps_i - eps_r``, scores how much the target depends on the
dropped variable.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bench import normalized_rmse
from .embedding import ConfigError, SeriesMatrix
from .model import ArchitectureConfig
from .numerics import DivergenceError
from .training import ForecastResult, train_model

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    index: int
    epsilon: float | None
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.epsilon is not None and np.isfinite(self.epsilon)


@dataclass
class CausalRanking:
    reference_error: float
    target: int
    entries: list[tuple[int, float, float]]  # (index, eps_i, eps_i - eps_r)
    ordering: list[int]
    selected: list[int]
    q: int
    names: list[str] = field(default_factory=list)
    invalid: list[FoldResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        name = (lambda i: self.names[i]) if self.names else (lambda i: f"x{i + 1}")
        return {
            "reference_error": self.reference_error,
            "target": self.target,
            "q": self.q,
            "names": list(self.names),
            "entries": [{"index": i, "name": name(i), "epsilon_i": e, "epsilon_ir": d} for i, e, d in self.entries],
            "ordering": self.ordering,
            "selected": self.selected,
            "invalid_folds": [{"index": f.index, "error": f.error} for f in self.invalid],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CausalRanking":
        entries = [(int(e["index"]), float(e["epsilon_i"]), float(e["epsilon_ir"])) for e in d["entries"]]
        return cls(float(d["reference_error"]), int(d["target"]), entries, [int(i) for i in d["ordering"]],
                   [int(i) for i in d["selected"]], int(d["q"]), names=list(d.get("names", [])),
                   invalid=[FoldResult(int(f["index"]), None, f.get("error")) for f in d.get("invalid_folds", [])])


@dataclass
class WeightedNetwork:
    nodes: list[str]
    directed_edges: list[tuple[str, str, float]] = field(default_factory=list)
    undirected_edges: list[tuple[str, str, float]] = field(default_factory=list)
    flagged: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "directed_edges": [{"from": a, "to": b, "weight": w} for a, b, w in self.directed_edges],
            "undirected_edges": [{"a": a, "b": b, "weight": w} for a, b, w in self.undirected_edges],
            "flagged": self.flagged,
        }


def _check_truth(truth, L: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if truth.size != L - 1:
        raise ConfigError(f"held-out truth has {truth.size} values, need L - 1 = {L - 1}")
    return truth


def _fit_error(X: SeriesMatrix, target: int, config: ArchitectureConfig, truth) -> tuple[float, ForecastResult]:
    cfg = config.replace(input_dim=X.n)
    _, res = train_model(X, target, cfg)
    return normalized_rmse(truth, res.predictions), res


def reference_error(X: SeriesMatrix, target, config: ArchitectureConfig, truth) -> float:
    """Held-out normalized RMSE of the model trained on every variable of ``X``."""
    truth = _check_truth(truth, config.L)
    return _fit_error(X, X.index_of(target), config, truth)[0]


def _fold(args) -> FoldResult:
    X, target, config, truth, i = args
    keep = [r for r in range(X.n) if r != i]
    try:
        eps, _ = _fit_error(X.rows(keep), keep.index(target), config, truth)
    except (DivergenceError, FloatingPointError) as exc:
        return FoldResult(i, None, f"{type(exc).__name__}: {exc}")
    return FoldResult(i, float(eps))


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def leave_one_out_errors(X: SeriesMatrix, target, config: ArchitectureConfig, truth,
                         candidates=None, jobs: int = 1) -> list[FoldResult]:
    """Retrain once per candidate with that variable removed; never drops the target."""
    target = X.index_of(target)
    truth = _check_truth(truth, config.L)
    if X.n < 2:
        raise ConfigError("leave-one-out needs at least two variables")
    if candidates is None:
        candidates = [i for i in range(X.n) if i != target]
    candidates = [int(i) for i in candidates if int(i) != target]
    folds = _map(_fold, [(X, target, config, truth, i) for i in candidates], jobs)
    folds.sort(key=lambda f: f.index)
    for f in folds:
        if not f.valid:
            log.warning("fold without variable %d dropped: %s", f.index, f.error)
    return folds


def rank_and_select(reference: float, folds: list[FoldResult], target: int, q: int,
                    names: list[str] | None = None) -> CausalRanking:
    """Order candidates by eps_i - eps_r (largest first) and keep the target plus the top q-1."""
    if q < 1:
        raise ConfigError("q must be >= 1")
    valid = [f for f in folds if f.valid]
    invalid = [f for f in folds if not f.valid]
    entries = [(f.index, f.epsilon, f.epsilon - reference) for f in valid]
    ordering = [i for i, _, _ in sorted(entries, key=lambda e: (-e[2], e[0]))]
    chosen = ordering[: max(0, q - 1)]
    selected = sorted(set(chosen) | {target})
    return CausalRanking(reference, target, entries, ordering, selected, q, list(names or []), invalid)


def causal_ranking(X: SeriesMatrix, target, config: ArchitectureConfig, truth, q: int,
                   jobs: int = 1) -> CausalRanking:
    target = X.index_of(target)
    eps_r = reference_error(X, target, config, truth)
    folds = leave_one_out_errors(X, target, config, truth, jobs=jobs)
    return rank_and_select(eps_r, folds, target, q, X.names)


@dataclass
class SelectionResult:
    ranking: CausalRanking
    forecast: ForecastResult
    reference_forecast: ForecastResult | None = None

    @property
    def predictions(self) -> np.ndarray:
        return self.forecast.predictions


def select_and_forecast(record: SeriesMatrix, target, m: int, config: ArchitectureConfig, q: int,
                        jobs: int = 1) -> SelectionResult:
    """Rank inputs on the held-out tail of ``record``, then retrain on the top q.

    ``record`` carries m known columns followed by the L-1 held-out ones.
    """
    target = record.index_of(target)
    L = config.L
    if record.m < m + L - 1:
        raise ConfigError(f"record has {record.m} columns, need m + L - 1 = {m + L - 1}")
    X = record.head(m)
    truth = record.values[target, m: m + L - 1]
    eps_r, ref = _fit_error(X, target, config, truth)
    folds = leave_one_out_errors(X, target, config, truth, jobs=jobs)
    ranking = rank_and_select(eps_r, folds, target, q, record.names)
    if ranking.selected == list(range(X.n)):
        return SelectionResult(ranking, ref, ref)
    Xs = X.rows(ranking.selected)
    _, res = train_model(Xs, ranking.selected.index(target), config.replace(input_dim=Xs.n))
    return SelectionResult(ranking, res, ref)


def granger_network(record: SeriesMatrix, selected, m: int, config: ArchitectureConfig,
                    jobs: int = 1) -> WeightedNetwork:
    """Directed edges i -> j weighted by eps_{i,r} with j as the target, within ``selected``."""
    selected = [int(i) for i in selected]
    if len(selected) < 2:
        raise ConfigError("a network needs at least two variables")
    sub = record.rows(selected)
    X = sub.head(m)
    names = sub.names
    edges = []
    for j in range(sub.n):
        truth = sub.values[j, m: m + config.L - 1]
        eps_r = reference_error(X, j, config, truth)
        for f in leave_one_out_errors(X, j, config, truth, jobs=jobs):
            if f.valid:
                edges.append((names[f.index], names[j], float(f.epsilon - eps_r)))
    return WeightedNetwork(list(names), directed_edges=edges)


def pcc_network(X: SeriesMatrix) -> WeightedNetwork:
    """Complete undirected graph weighted by pairwise Pearson correlation."""
    v = X.values
    centred = v - v.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centred * centred, axis=1))
    constant = norms < 1e-12
    flagged = [X.names[i] for i in np.nonzero(constant)[0]]
    edges = []
    for a in range(X.n):
        for b in range(a + 1, X.n):
            if constant[a] or constant[b]:
                w = 0.0
            else:
                w = float(np.clip(centred[a] @ centred[b] / (norms[a] * norms[b]), -1.0, 1.0))
            edges.append((X.names[a], X.names[b], w))
    return WeightedNetwork(list(X.names), undirected_edges=edges, flagged=flagged)
