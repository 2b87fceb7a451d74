"""Multistep forecasting of one observable from a short high-dimensional record.

A dilated causal convolution encoder maps an n x m window onto the target's
delay matrix; the unknown lower-right cells become the forecast. Input
variables can be ranked by how much leaving them out hurts held-out error.
"""

from .bench import ar_forecast, hes_forecast, normalized_rmse, pcc
from .causal import CausalRanking, causal_ranking, select_and_forecast
from .datasets import LorenzConfig, integrate_coupled_lorenz, load_csv, save_csv
from .embedding import ConfigError, SeriesMatrix, build_delay_matrix, extract_predictions
from .model import ArchitectureConfig, SticmNetwork, build_network
from .numerics import DimensionError, DivergenceError
from .training import ForecastResult, forecast, train_model

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig",
    "CausalRanking",
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "ForecastResult",
    "LorenzConfig",
    "SeriesMatrix",
    "SticmNetwork",
    "ar_forecast",
    "build_delay_matrix",
    "build_network",
    "causal_ranking",
    "extract_predictions",
    "forecast",
    "hes_forecast",
    "integrate_coupled_lorenz",
    "load_csv",
    "normalized_rmse",
    "pcc",
    "save_csv",
    "select_and_forecast",
    "train_model",
]
