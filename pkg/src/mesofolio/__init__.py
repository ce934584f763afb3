"""Random-matrix filtering, mesoscopic communities and minimum-variance portfolios."""

from .data import (
    PricePanel,
    ReturnPanel,
    WindowSpec,
    generate_synthetic,
    load_prices,
    regime_loadings,
    slice_window,
    standardize,
    subsample_assets,
    to_log_returns,
)
from .spectral import (
    CorrelationDecomposition,
    MPBounds,
    correlation_matrix,
    decompose,
    decompose_panel,
    mp_bounds,
    relative_change_norm,
    risk_fractions,
)
from .communities import Partition, detect_communities, modularity_of
from .portfolio import (
    WeightVector,
    build_covariance,
    community_gmv,
    effective_size,
    equal_weights,
    frontier_point,
    gmv,
    solve_constrained,
)
from .backtest import BacktestReport, StrategySpec, run_backtest

__version__ = "0.1.0"

__all__ = [
    "Partition",
    "detect_communities",
    "modularity_of",
    "PricePanel",
    "ReturnPanel",
    "WindowSpec",
    "generate_synthetic",
    "load_prices",
    "regime_loadings",
    "slice_window",
    "standardize",
    "subsample_assets",
    "to_log_returns",
    "CorrelationDecomposition",
    "MPBounds",
    "correlation_matrix",
    "decompose",
    "decompose_panel",
    "mp_bounds",
    "relative_change_norm",
    "risk_fractions",
    "WeightVector",
    "build_covariance",
    "community_gmv",
    "effective_size",
    "equal_weights",
    "frontier_point",
    "gmv",
    "solve_constrained",
    "BacktestReport",
    "StrategySpec",
    "run_backtest",
]
