"""Sequential factor-covariance forecasting and portfolio backtesting.

The model decouples a cross-section of asset returns into univariate
conjugate dynamic regressions on a small block of observable risk factors,
selects each equation's factor subset and discount pair by dynamic model
probabilities, learns the factor ordering, and recouples everything into
one-step-ahead joint return moments for mean-variance and minimum-variance
portfolio construction.
"""

from .data import ReturnPanel, SyntheticSpec, generate_synthetic, load_panel, save_panel
from .engine import RunConfig, run_backtest, run_statistics_only

__version__ = "0.1.0"

__all__ = [
    "ReturnPanel",
    "RunConfig",
    "SyntheticSpec",
    "generate_synthetic",
    "load_panel",
    "save_panel",
    "run_backtest",
    "run_statistics_only",
    "__version__",
]
