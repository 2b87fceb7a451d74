"""Synthetic and tabular data sources plus z-score bookkeeping."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding import SeriesMatrix

log = logging.getLogger(__name__)


class IntegrationError(FloatingPointError):
    pass


class ParseError(ValueError):
    pass


@dataclass
class LorenzConfig:
    """Ring of Lorenz oscillators, each driven by its predecessor's x.

    Subsystem s obeys
        x' = sigma (y - x) + C x_{s-1}
        y' = x (rho - z) - y
        z' = x y - beta z
    with indices taken modulo ``subsystems``.
    """

    subsystems: int = 30
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    coupling: float = 0.1
    dt: float = 0.01
    sample_stride: int = 2
    transient_steps: int = 2000
    seed: int = 0
    initial_state: list[float] | None = None

    def __post_init__(self):
        if self.subsystems < 1:
            raise ValueError("subsystems must be >= 1")
        if self.dt <= 0 or self.sample_stride < 1 or self.transient_steps < 0:
            raise ValueError("dt must be > 0, sample_stride >= 1, transient_steps >= 0")
        if self.initial_state is not None and len(self.initial_state) != 3 * self.subsystems:
            raise ValueError(f"initial_state needs {3 * self.subsystems} values")

    @property
    def n(self) -> int:
        return 3 * self.subsystems

    @property
    def sampling_interval(self) -> float:
        return self.dt * self.sample_stride

    def to_dict(self) -> dict:
        return asdict(self)


def lorenz_rhs(state: np.ndarray, cfg: LorenzConfig) -> np.ndarray:
    """Time derivative of a (subsystems, 3) state array."""
    x, y, z = state[:, 0], state[:, 1], state[:, 2]
    out = np.empty_like(state)
    out[:, 0] = cfg.sigma * (y - x) + cfg.coupling * np.roll(x, 1)
    out[:, 1] = x * (cfg.rho - z) - y
    out[:, 2] = x * y - cfg.beta * z
    return out


def rk4_step(state: np.ndarray, dt: float, cfg: LorenzConfig) -> np.ndarray:
    k1 = lorenz_rhs(state, cfg)
    k2 = lorenz_rhs(state + 0.5 * dt * k1, cfg)
    k3 = lorenz_rhs(state + 0.5 * dt * k2, cfg)
    k4 = lorenz_rhs(state + dt * k3, cfg)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def initial_state(cfg: LorenzConfig) -> np.ndarray:
    if cfg.initial_state is not None:
        return np.asarray(cfg.initial_state, dtype=np.float64).reshape(cfg.subsystems, 3)
    rng = np.random.default_rng(cfg.seed)
    state = rng.uniform(-10.0, 10.0, size=(cfg.subsystems, 3))
    state[:, 2] += 25.0
    return state


def integrate(state: np.ndarray, cfg: LorenzConfig, n_steps: int, dt: float | None = None) -> np.ndarray:
    """Advance ``state`` by ``n_steps`` RK4 steps and return the final state."""
    dt = cfg.dt if dt is None else dt
    # overflow is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps):
            state = rk4_step(state, dt, cfg)
            if not np.all(np.isfinite(state)):
                raise IntegrationError(f"Lorenz state blew up at step {step}")
    return state


def integrate_coupled_lorenz(cfg: LorenzConfig, steps: int) -> SeriesMatrix:
    """Sample ``steps`` states after discarding the transient.

    Rows are ordered x1, y1, z1, x2, y2, z2, ...
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = integrate(initial_state(cfg), cfg, cfg.transient_steps)
    out = np.empty((steps, cfg.subsystems, 3))
    out[0] = state
    for s in range(1, steps):
        try:
            state = integrate(state, cfg, cfg.sample_stride)
        except IntegrationError as exc:
            raise IntegrationError(f"{exc} (sample {s})") from None
        out[s] = state
    names = [f"{c}{s + 1}" for s in range(cfg.subsystems) for c in "xyz"]
    return SeriesMatrix(out.reshape(steps, -1).T.copy(), names)


def add_observation_noise(X: SeriesMatrix, sigma: float, seed: int = 0) -> SeriesMatrix:
    """Add i.i.d. N(0, sigma^2) measurement noise to every entry."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if sigma == 0:
        return SeriesMatrix(X.values.copy(), list(X.names))
    rng = np.random.default_rng(seed)
    return SeriesMatrix(X.values + rng.normal(0.0, sigma, size=X.values.shape), list(X.names))


def load_csv(path) -> SeriesMatrix:
    """Read a header + numeric rows CSV (rows are time points) as an (n, m) matrix."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise ParseError(f"{path}: header row has empty column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {lineno}, column {col + 1} ({header[col]!r}): "
                                     f"non-numeric value {cell!r}") from None
                if not np.isfinite(v):
                    raise ParseError(f"{path}: row {lineno}, column {col + 1} ({header[col]!r}): "
                                     f"missing value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return SeriesMatrix(np.array(rows).T.copy(), header)


def save_csv(X: SeriesMatrix, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(X.names)
        for col in X.values.T:
            w.writerow([repr(float(v)) for v in col])


@dataclass
class NormalizationState:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray = field(default=None)  # type: ignore[assignment]
    std_floor: float = 1e-9

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X) - self.mean[:, None]) / self.std[:, None]

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) * self.std[:, None] + self.mean[:, None]

    def invert_row(self, z, row: int) -> np.ndarray:
        return np.asarray(z) * self.std[row] + self.mean[row]


def fit_normalization(X, m: int | None = None, std_floor: float = 1e-9) -> NormalizationState:
    """Per-variable mean/std over the first ``m`` columns (population std)."""
    values = X.values if isinstance(X, SeriesMatrix) else np.asarray(X, dtype=np.float64)
    m = values.shape[1] if m is None else m
    if not 1 <= m <= values.shape[1]:
        raise ValueError(f"m={m} outside 1..{values.shape[1]}")
    window = values[:, :m]
    mean = window.mean(axis=1)
    std = window.std(axis=1)
    constant = std < std_floor
    if constant.any():
        log.info("constant variables at rows %s; std floored at %g", np.nonzero(constant)[0].tolist(), std_floor)
    return NormalizationState(mean, np.maximum(std, std_floor), constant, std_floor)
