"""Metrics, classical baselines and the comparison runner."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import DimensionError

log = logging.getLogger(__name__)

STD_FLOOR = 1e-9


class FitError(np.linalg.LinAlgError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.shape != pred.shape:
        raise DimensionError(f"truth has {truth.size} values, prediction {pred.size}")
    if truth.size < 2:
        raise DimensionError("need at least two points")
    return truth, pred


def normalized_rmse(truth, pred, return_flag: bool = False):
    """RMSE divided by the population std of ``truth``.

    When the truth is (numerically) constant the raw RMSE is returned instead;
    with ``return_flag=True`` the result is ``(value, normalized)``.
    """
    truth, pred = _pair(truth, pred)
    rmse = float(np.sqrt(np.mean((truth - pred) ** 2)))
    std = float(np.std(truth))
    normalized = std >= STD_FLOOR
    value = rmse / std if normalized else rmse
    return (value, normalized) if return_flag else value


def pcc(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    a = truth - truth.mean()
    b = pred - pred.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na < STD_FLOOR or nb < STD_FLOOR:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def safe_pcc(truth, pred) -> float:
    try:
        return pcc(truth, pred)
    except UndefinedCorrelationError:
        return float("nan")


def ar_fit(series, order: int, ridge: float = 1e-8) -> tuple[np.ndarray, float]:
    """Least-squares AR(p) with intercept. Returns (coefficients lag-1 first, intercept)."""
    y = np.asarray(series, dtype=np.float64).ravel()
    p = int(order)
    if not 1 <= p < y.size:
        raise ValueError(f"AR order must satisfy 1 <= p < m, got p={p}, m={y.size}")
    rows = y.size - p
    A = np.empty((rows, p + 1))
    for lag in range(1, p + 1):
        A[:, lag - 1] = y[p - lag: y.size - lag]
    A[:, p] = 1.0
    b = y[p:]
    AtA = A.T @ A
    Atb = A.T @ b
    try:
        if np.linalg.cond(AtA) > 1e12:
            raise np.linalg.LinAlgError("singular normal equations")
        coef = np.linalg.solve(AtA, Atb)
    except np.linalg.LinAlgError:
        log.debug("AR(%d) normal equations singular, using ridge %g", p, ridge)
        scale = max(1.0, float(np.trace(AtA)) / (p + 1))
        coef = np.linalg.solve(AtA + ridge * scale * np.eye(p + 1), Atb)
    return coef[:p], float(coef[p])


def ar_forecast(series, order: int | None = None, horizon: int = 1) -> np.ndarray:
    """Fit AR(p) by least squares and roll it forward ``horizon`` steps."""
    y = np.asarray(series, dtype=np.float64).ravel()
    p = default_ar_order(y.size) if order is None else int(order)
    coef, c = ar_fit(y, p)
    hist = list(y[-p:])
    out = np.empty(horizon)
    for h in range(horizon):
        nxt = c + float(np.dot(coef, hist[::-1][:p]))
        out[h] = nxt
        hist.append(nxt)
        hist.pop(0)
    return out


def default_ar_order(m: int) -> int:
    return max(1, min(10, m // 3))


def hes_forecast(series, alpha: float = 0.3, beta: float = 0.1, horizon: int = 1) -> np.ndarray:
    """Holt's linear trend smoothing: level + i * trend."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    y = np.asarray(series, dtype=np.float64).ravel()
    level = y[0]
    trend = y[1] - y[0] if y.size > 1 else 0.0
    for v in y[1:]:
        prev = level
        level = alpha * v + (1 - alpha) * (level + trend)
        trend = beta * (level - prev) + (1 - beta) * trend
    return level + trend * np.arange(1, horizon + 1)


@dataclass
class EvalReport:
    method: str
    normalized_rmse: float
    pcc: float
    horizon: int
    run_seed: int
    wall_time: float
    target: int = 0
    predictions: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def evaluate_predictions(method: str, truth, pred, seed: int, target: int, wall: float) -> EvalReport:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    return EvalReport(method, normalized_rmse(truth, pred), safe_pcc(truth, pred), truth.size, seed,
                      wall, target, [float(v) for v in pred])


@dataclass
class BenchmarkCase:
    """One forecasting problem: an (n, m + L - 1) record and a target row."""

    record: object  # SeriesMatrix
    target: int
    m: int
    seed: int = 0
    label: str = ""


NOISE_SEED_OFFSET = 1000


def lorenz_cases(seeds, targets_per_seed: int, m: int, L: int, noise_sigma: float = 0.0,
                 lorenz: dict | None = None) -> list[BenchmarkCase]:
    """One coupled-Lorenz record of m + L - 1 samples per seed, with random distinct targets.

    Targets are drawn from ``default_rng(seed)``; noise uses ``seed + NOISE_SEED_OFFSET``.
    """
    from .datasets import LorenzConfig, add_observation_noise, integrate_coupled_lorenz

    cases = []
    for seed in seeds:
        cfg = LorenzConfig(**{**(lorenz or {}), "seed": int(seed)})
        X = integrate_coupled_lorenz(cfg, m + L - 1)
        X = add_observation_noise(X, noise_sigma, int(seed) + NOISE_SEED_OFFSET)
        rng = np.random.default_rng(int(seed))
        targets = rng.choice(X.n, size=min(targets_per_seed, X.n), replace=False)
        for t in sorted(int(v) for v in targets):
            cases.append(BenchmarkCase(X, t, m, int(seed), f"seed{seed}-{X.names[t]}"))
    return cases


def run_case(case: BenchmarkCase, methods, config, q: int | None = None, jobs: int = 1) -> list[EvalReport]:
    """Evaluate every method on one case; failures are recorded, not raised."""
    from .causal import select_and_forecast
    from .training import train_model

    X = case.record
    m = case.m
    L = config.L
    truth = X.values[case.target, m: m + L - 1]
    if truth.size != L - 1:
        raise ValueError(f"record has {X.m} columns, need m + L - 1 = {m + L - 1}")
    history = X.values[case.target, :m]
    reports = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            if method == "sticm":
                cfg = config.replace(input_dim=X.n)
                _, res = train_model(X.head(m), case.target, cfg)
                pred = res.predictions
            elif method == "sticm-select":
                pred = select_and_forecast(X, case.target, m, config, q or X.n, jobs=jobs).predictions
            elif method == "ar":
                pred = ar_forecast(history, None, L - 1)
            elif method == "hes":
                pred = hes_forecast(history, horizon=L - 1)
            else:
                raise ValueError(f"unknown method {method!r}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = evaluate_predictions(method, truth, pred, case.seed, case.target, time.perf_counter() - t0)
        except Exception as exc:  # noqa: BLE001 - per-method failures belong in the report
            log.warning("method %s failed on %s: %s", method, case.label or case.target, exc)
            rep = EvalReport(method, float("nan"), float("nan"), L - 1, case.seed, time.perf_counter() - t0,
                             case.target, [], f"{type(exc).__name__}: {exc}")
        reports.append(rep)
    return reports


def run_benchmark(cases, methods, config, q: int | None = None, jobs: int = 1) -> list[EvalReport]:
    reports = []
    for case in cases:
        reports.extend(run_case(case, methods, config, q=q, jobs=jobs))
    return reports


def comparison_table(reports: list[EvalReport]) -> list[dict]:
    """Median normalized RMSE / PCC per method, in first-seen method order."""
    order: list[str] = []
    by: dict[str, list[EvalReport]] = {}
    for r in reports:
        if r.method not in by:
            order.append(r.method)
            by[r.method] = []
        by[r.method].append(r)
    rows = []
    for name in order:
        ok = [r for r in by[name] if r.ok]
        rows.append({
            "method": name,
            "runs": len(by[name]),
            "failed": len(by[name]) - len(ok),
            "median_nrmse": float(np.median([r.normalized_rmse for r in ok])) if ok else float("nan"),
            "median_pcc": float(np.nanmedian([r.pcc for r in ok])) if ok else float("nan"),
        })
    return rows


def write_benchmark(reports: list[EvalReport], out_dir, truths: dict | None = None) -> list[Path]:
    """Write reports JSON, comparison CSV and one prediction CSV per method."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "reports.json"
    # wall times vary run to run; they belong in the caller's manifest, not here
    rows = [{k: v for k, v in asdict(r).items() if k != "wall_time"} for r in reports]
    p.write_text(json.dumps(rows, indent=2) + "\n")
    written.append(p)
    p = out / "comparison.csv"
    table = comparison_table(reports)
    with p.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "runs", "failed", "median_nrmse", "median_pcc"])
        w.writeheader()
        w.writerows(table)
    written.append(p)
    truths = truths or {}
    for row in table:
        name = row["method"]
        p = out / f"predictions_{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "target", "step", "predicted", "actual"])
            for r in reports:
                if r.method != name:
                    continue
                actual = truths.get((r.run_seed, r.target), [])
                for i, v in enumerate(r.predictions):
                    w.writerow([r.run_seed, r.target, i + 1, repr(v), repr(float(actual[i])) if i < len(actual) else ""])
        written.append(p)
    return written
