"""Semi-supervised loss, training loop and forecasting.

The encoder output is compared with the known part of the target delay
matrix (determined-state loss), its lower-right future cells are pulled
towards agreement (future-consistency loss), and the decoder has to rebuild
the input from it (reconstruction loss).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import NormalizationState, fit_normalization
from .embedding import ConfigError, SeriesMatrix, build_delay_matrix, extract_predictions, future_index_arrays
from .model import ArchitectureConfig, SticmNetwork, build_network
from .numerics import Adam, DimensionError, DivergenceError

log = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    ds: float
    fc: float
    rec: float
    total: float

    def as_row(self) -> list[float]:
        return [self.ds, self.fc, self.rec, self.total]


@dataclass
class ForecastResult:
    predictions: np.ndarray
    training_curve: list[LossBreakdown] = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False
    normalized_predictions: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "predictions": [float(v) for v in self.predictions],
            "epochs_run": self.epochs_run,
            "converged": self.converged,
            "final_loss": asdict(self.training_curve[-1]) if self.training_curve else None,
        }


def ds_divisor(L: int, m: int) -> int:
    return 2 * m * L - L * L + L


def loss_ds(est: np.ndarray, truth: np.ndarray, known: np.ndarray) -> float:
    """Squared error over the known cells, divided by 2mL - L^2 + L."""
    L, m = est.shape
    if truth.shape != est.shape or known.shape != est.shape:
        raise DimensionError("estimate, truth and mask shapes differ")
    r = (est - truth)[known]
    return float(r @ r) / ds_divisor(L, m)


def loss_ds_grad(est, truth, known) -> tuple[float, np.ndarray]:
    L, m = est.shape
    div = ds_divisor(L, m)
    r = np.where(known, est - truth, 0.0)
    return float(np.sum(r * r)) / div, (2.0 / div) * r


def loss_fc(est: np.ndarray) -> float:
    return loss_fc_grad(est)[0]


def loss_fc_grad(est: np.ndarray, index=None) -> tuple[float, np.ndarray]:
    """Spread of the future estimates around their per-time mean, over L(L-1)."""
    L, m = est.shape
    rows, cols, grp = index if index is not None else future_index_arrays(L, m)
    grad = np.zeros_like(est)
    if L < 2:
        return 0.0, grad
    vals = est[rows, cols]
    sums = np.bincount(grp, weights=vals, minlength=L - 1)
    counts = np.bincount(grp, minlength=L - 1)
    dev = vals - (sums / counts)[grp]
    div = L * (L - 1)
    # d/dv of sum (v - mean)^2 is 2 (v - mean): the mean term cancels within a group
    grad[rows, cols] = (2.0 / div) * dev
    return float(dev @ dev) / div, grad


def loss_rec(X: np.ndarray, Xhat: np.ndarray) -> float:
    """Frobenius norm of X - Xhat."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise DimensionError(f"reconstruction shape {Xhat.shape} != {X.shape}")
    return float(np.sqrt(np.sum((X - Xhat) ** 2)))


def loss_rec_grad(X, Xhat) -> tuple[float, np.ndarray]:
    diff = Xhat - X
    value = float(np.sqrt(np.sum(diff * diff)))
    if value == 0.0:
        return 0.0, np.zeros_like(diff)
    return value, diff / value


def total_loss(ds: float, fc: float, rec: float, lambda1: float = 1.0, lambda2: float = 1.0,
               lambda3: float = 1.0) -> LossBreakdown:
    lams = (lambda1, lambda2, lambda3)
    if any(lam < 0 for lam in lams):
        raise ConfigError("loss weights must be non-negative")
    if not any(lam > 0 for lam in lams):
        raise ConfigError("at least one loss weight must be positive")
    return LossBreakdown(ds, fc, rec, lambda1 * ds + lambda2 * fc + lambda3 * rec)


class _Problem:
    """Normalised input, delay matrix and index caches for one training run."""

    def __init__(self, X: SeriesMatrix, target: int, L: int):
        self.norm: NormalizationState = fit_normalization(X)
        self.x = self.norm.apply(X.values)
        self.target = target
        self.delay = build_delay_matrix(self.x[target], L)
        self.fc_index = future_index_arrays(L, X.m)


def _prepare(X: SeriesMatrix, target, config: ArchitectureConfig) -> tuple[int, _Problem]:
    target = X.index_of(target)
    config.validate()
    if X.n != config.input_dim:
        raise DimensionError(f"data has {X.n} variables, config expects input_dim={config.input_dim}")
    if X.m < config.L:
        raise ConfigError(f"need m >= L, got m={X.m}, L={config.L}")
    if X.m < config.receptive_field:
        log.warning("m=%d is shorter than the receptive field %d", X.m, config.receptive_field)
    return target, _Problem(X, target, config.L)


def evaluate(net: SticmNetwork, problem: _Problem) -> tuple[LossBreakdown, np.ndarray]:
    cfg = net.config
    est = net.encode(problem.x)
    xhat = net.decode(est)
    ds = loss_ds(est, problem.delay.entries, problem.delay.known)
    fc = loss_fc_grad(est, problem.fc_index)[0]
    rec = loss_rec(problem.x, xhat)
    return total_loss(ds, fc, rec, cfg.lambda1, cfg.lambda2, cfg.lambda3), est


def train_step(net: SticmNetwork, problem: _Problem) -> tuple[LossBreakdown, np.ndarray]:
    """Forward both halves, accumulate gradients of the weighted loss. No update."""
    cfg = net.config
    est = net.encode(problem.x)
    xhat = net.decode(est)
    ds, g_ds = loss_ds_grad(est, problem.delay.entries, problem.delay.known)
    fc, g_fc = loss_fc_grad(est, problem.fc_index)
    rec, g_rec = loss_rec_grad(problem.x, xhat)
    breakdown = total_loss(ds, fc, rec, cfg.lambda1, cfg.lambda2, cfg.lambda3)
    g_est = cfg.lambda1 * g_ds + cfg.lambda2 * g_fc
    if cfg.lambda3:
        g_est += net.backward_decoder(cfg.lambda3 * g_rec)
    net.backward_encoder(g_est)
    return breakdown, est


def train_model(X: SeriesMatrix, target, config: ArchitectureConfig,
                net: SticmNetwork | None = None) -> tuple[SticmNetwork, ForecastResult]:
    """Fit encoder and decoder on all m columns of ``X`` and forecast L-1 steps."""
    target, problem = _prepare(X, target, config)
    net = build_network(config) if net is None else net
    opt = Adam(net.parameters, config.learning_rate, config.beta1, config.beta2, config.eps)
    curve: list[LossBreakdown] = []
    converged = False
    quiet = 0
    prev = None
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        opt.zero_grad()
        breakdown, _ = train_step(net, problem)
        if not math.isfinite(breakdown.total):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        curve.append(breakdown)
        try:
            opt.step()
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} at epoch {epoch}", epoch=epoch) from None
        if prev is not None and abs(prev - breakdown.total) < config.convergence_tol:
            quiet += 1
            if quiet >= config.patience:
                converged = True
                break
        else:
            quiet = 0
        prev = breakdown.total
    result = _forecast(net, problem)
    result.training_curve = curve
    result.epochs_run = len(curve)
    result.converged = converged
    return net, result


def _forecast(net: SticmNetwork, problem: _Problem) -> ForecastResult:
    est = net.encode(problem.x)
    z = extract_predictions(est)
    return ForecastResult(problem.norm.invert_row(z, problem.target), normalized_predictions=z)


def forecast(net: SticmNetwork, X: SeriesMatrix, target) -> ForecastResult:
    """Predict times m+1 .. m+L-1 in the units of ``X``."""
    target, problem = _prepare(X, target, net.config)
    return _forecast(net, problem)
