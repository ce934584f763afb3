"""Price ingestion, return panels, windowing and synthetic planted-block panels."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataError, PreconditionError

DEFAULT_MISSING_THRESHOLD = 0.01
SYNTHETIC_START = "2000-01-03"


@dataclass(frozen=True)
class PricePanel:
    dates: np.ndarray
    assets: tuple
    prices: np.ndarray
    sector: Optional[dict] = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape != (len(self.dates), len(self.assets)):
            raise DataError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        if len(set(self.assets)) != len(self.assets):
            raise DataError("asset identifiers must be unique")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise DataError("non-positive or missing price encountered")
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if len(dates) > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def n_assets(self) -> int:
        return len(self.assets)


@dataclass(frozen=True)
class ReturnPanel:
    """Aligned ``T x N`` return matrix with dates and asset ids.

    ``zero_variance`` lists the asset ids whose column had no variation when
    the panel was standardized; those columns are kept as zeros.
    """

    dates: np.ndarray
    assets: tuple
    returns: np.ndarray
    standardized: bool = False
    zero_variance: tuple = ()
    sector: Optional[dict] = None

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2 or returns.shape != (len(self.dates), len(self.assets)):
            raise DataError(
                f"return matrix shape {returns.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype="datetime64[D]"))
        object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def n_obs(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def rows(self, start: int, stop: int) -> "ReturnPanel":
        return dataclasses.replace(
            self, dates=self.dates[start:stop], returns=self.returns[start:stop]
        )

    def columns(self, idx: Sequence[int]) -> "ReturnPanel":
        idx = np.asarray(idx, dtype=int)
        assets = tuple(self.assets[i] for i in idx)
        return dataclasses.replace(
            self,
            assets=assets,
            returns=self.returns[:, idx],
            zero_variance=tuple(a for a in self.zero_variance if a in assets),
        )


@dataclass(frozen=True)
class WindowSpec:
    """Observation window relative to a split index ``t0``.

    ``mode`` is ``"in-sample"`` for rows ``[t0 - delta, t0)``,
    ``"out-of-sample"`` for ``[t0, t0 + delta)`` and ``"rolling"`` for
    consecutive windows of ``length`` rows advanced by ``step``.
    ``t0`` may be a row index or a date (resolved to the first row on or
    after it).
    """

    t0: Union[int, str, np.datetime64, None] = None
    delta: Optional[int] = None
    mode: str = "in-sample"
    length: Optional[int] = None
    step: Optional[int] = None


def _read_wide(path: Path) -> pd.DataFrame:
    df = pd.read_csv(path)
    if df.columns[0].strip().lower() != "date":
        raise DataError(f"{path}: first column must be 'date' in wide layout")
    df = df.rename(columns={df.columns[0]: "date"})
    df["date"] = pd.to_datetime(df["date"])
    return df.set_index("date")


def _read_long(path: Path) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = {"date", "ticker", "close"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: long layout needs columns date,ticker,close; missing {sorted(missing)}")
    df["date"] = pd.to_datetime(df["date"])
    if df.duplicated(["date", "ticker"]).any():
        raise DataError(f"{path}: duplicated (date, ticker) rows")
    wide = df.pivot(index="date", columns="ticker", values="close")
    wide.columns = [str(c) for c in wide.columns]
    return wide


def load_prices(
    path,
    layout: str = "wide",
    missing_threshold: float = DEFAULT_MISSING_THRESHOLD,
    sector: Optional[dict] = None,
) -> PricePanel:
    """Read a CSV of adjusted closes into a :class:`PricePanel`.

    Assets whose fraction of missing cells exceeds ``missing_threshold`` are
    dropped. Remaining gaps are forward filled; gaps before an asset's first
    quote are back filled from that quote. What was dropped and filled is
    recorded in ``panel.report``.
    """
    path = Path(path)
    try:
        if layout == "wide":
            frame = _read_wide(path)
        elif layout == "long":
            frame = _read_long(path)
        else:
            raise DataError(f"unknown layout {layout!r}; expected 'wide' or 'long'")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    frame = frame.sort_index()
    if frame.index.has_duplicates:
        raise DataError(f"{path}: duplicated dates")
    frame = frame.apply(pd.to_numeric, errors="coerce")

    frac_missing = frame.isna().mean(axis=0)
    dropped = sorted(str(c) for c in frac_missing.index[frac_missing > missing_threshold])
    frame = frame.loc[:, frac_missing <= missing_threshold]
    if frame.shape[1] == 0:
        raise DataError(f"{path}: no usable assets after missing-data filtering")

    gaps = frame.isna()
    n_forward = int((gaps & frame.ffill().notna()).sum().sum())
    n_backward = int(gaps.sum().sum()) - n_forward
    frame = frame.ffill().bfill()

    values = frame.to_numpy(dtype=float)
    bad = ~np.isfinite(values) | (values <= 0)
    if bad.any():
        t, i = np.argwhere(bad)[0]
        raise DataError(
            f"non-positive price {values[t, i]!r} for {frame.columns[i]} "
            f"on {frame.index[t].date()}"
        )

    assets = tuple(str(c) for c in frame.columns)
    if sector is not None:
        sector = {a: sector[a] for a in assets if a in sector}
    report = {
        "dropped_assets": dropped,
        "forward_filled_cells": n_forward,
        "back_filled_cells": n_backward,
        "missing_threshold": missing_threshold,
    }
    return PricePanel(
        dates=frame.index.to_numpy(dtype="datetime64[D]"),
        assets=assets,
        prices=values,
        sector=sector,
        report=report,
    )


def to_log_returns(panel: PricePanel, kind: str = "log") -> ReturnPanel:
    """Returns between consecutive rows; ``kind="simple"`` gives arithmetic returns."""
    if panel.prices.shape[0] < 2:
        raise PreconditionError("need at least two price observations to form returns")
    ratio = panel.prices[1:] / panel.prices[:-1]
    if kind == "log":
        returns = np.log(ratio)
    elif kind == "simple":
        returns = ratio - 1.0
    else:
        raise ValueError(f"unknown return kind {kind!r}")
    return ReturnPanel(
        dates=panel.dates[1:],
        assets=panel.assets,
        returns=returns,
        standardized=False,
        sector=panel.sector,
    )


def standardize(rp: ReturnPanel) -> ReturnPanel:
    if rp.n_obs < 2:
        raise PreconditionError("standardize needs T >= 2")
    x = rp.returns
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    # relative test so that tiny but genuine variation is not flagged
    scale = np.maximum(np.abs(mean), 1.0)
    zero = sd <= 1e-14 * scale
    z = np.zeros_like(x)
    ok = ~zero
    z[:, ok] = (x[:, ok] - mean[ok]) / sd[ok]
    flagged = tuple(a for a, flag in zip(rp.assets, zero) if flag)
    return dataclasses.replace(rp, returns=z, standardized=True, zero_variance=flagged)


def _resolve_t0(rp: ReturnPanel, t0) -> int:
    if t0 is None:
        raise PreconditionError("window needs a split point t0")
    if isinstance(t0, (int, np.integer)):
        return int(t0)
    target = np.datetime64(t0, "D")
    return int(np.searchsorted(rp.dates, target, side="left"))


def slice_window(rp: ReturnPanel, spec: WindowSpec):
    """Restrict ``rp`` to the rows selected by ``spec``.

    Returns a single panel, or a list of panels for ``mode="rolling"``.
    """
    T = rp.n_obs
    if spec.mode == "rolling":
        length, step = spec.length, spec.step or spec.length
        if not length or length <= 0 or step <= 0:
            raise PreconditionError("rolling window needs positive length and step")
        if length > T:
            raise PreconditionError(f"rolling length {length} exceeds {T} observations")
        return [rp.rows(s, s + length) for s in range(0, T - length + 1, step)]

    t0 = _resolve_t0(rp, spec.t0)
    delta = spec.delta
    if delta is None or delta <= 0:
        raise PreconditionError("window half-length delta must be positive")
    if spec.mode == "in-sample":
        start, stop = t0 - delta, t0
    elif spec.mode == "out-of-sample":
        start, stop = t0, t0 + delta
    else:
        raise ValueError(f"unknown window mode {spec.mode!r}")
    if start < 0 or stop > T:
        raise PreconditionError(
            f"window [{start}, {stop}) falls outside the panel's {T} observations"
        )
    if stop <= start:
        raise PreconditionError("empty window")
    return rp.rows(start, stop)


def split_window(rp: ReturnPanel, t0, delta: int) -> tuple:
    """In-sample and out-of-sample panels around ``t0``."""
    ins = slice_window(rp, WindowSpec(t0=t0, delta=delta, mode="in-sample"))
    oos = slice_window(rp, WindowSpec(t0=t0, delta=delta, mode="out-of-sample"))
    return ins, oos


def subsample_indices(n_assets: int, size: int, draws: int, seed: int) -> list:
    if size > n_assets:
        raise PreconditionError(f"subsample size {size} exceeds {n_assets} assets")
    if size < 1 or draws < 1:
        raise PreconditionError("subsample size and draws must be positive")
    rng = np.random.default_rng(seed)
    return [np.sort(rng.choice(n_assets, size=size, replace=False)) for _ in range(draws)]


def subsample_assets(rp: ReturnPanel, size: int, draws: int, seed: int) -> list:
    return [rp.columns(idx) for idx in subsample_indices(rp.n_assets, size, draws, seed)]


def block_labels(blocks) -> np.ndarray:
    return np.repeat(np.arange(len(blocks)), [int(size) for size, _ in blocks])


def regime_loadings(levels: Sequence[float], lengths: Sequence[int], n_assets: int) -> np.ndarray:
    """Piecewise-constant market loadings, one level per regime.

    The result has shape ``(sum(lengths), n_assets)`` and can be passed as
    ``market_loading`` to :func:`generate_synthetic`.
    """
    if len(levels) != len(lengths):
        raise ValueError("levels and lengths must have equal length")
    rows = np.repeat(np.asarray(levels, dtype=float), lengths)
    return np.repeat(rows[:, None], n_assets, axis=1)


def generate_synthetic(
    n_assets: int,
    n_obs: int,
    blocks,
    market_loading=0.0,
    noise_sd=1.0,
    seed: int = 0,
    volatility=None,
) -> ReturnPanel:
    """Planted-structure returns ``x_it = L_i m_t + b_i g_{c(i),t} + e_it``.

    ``blocks`` is a list of ``(size, intra_correlation)`` pairs laid out in
    column order. ``b_i = noise_sd_i * sqrt(rho / (1 - rho))`` so the
    block-plus-noise part has within-block correlation ``rho``.
    ``market_loading`` may be a scalar, a per-asset vector or a ``(T, N)``
    array of time-varying loadings (see :func:`regime_loadings`).
    ``volatility`` optionally rescales each asset's whole return, which
    leaves correlations untouched.
    """
    sizes = [int(s) for s, _ in blocks]
    rhos = np.array([float(r) for _, r in blocks])
    if sum(sizes) != n_assets or min(sizes, default=0) < 1:
        raise PreconditionError(f"block sizes {sizes} must be positive and sum to {n_assets}")
    if np.any(rhos < 0) or np.any(rhos >= 1):
        raise PreconditionError("intra_correlation must lie in [0, 1)")
    noise_sd = np.broadcast_to(np.asarray(noise_sd, dtype=float), (n_assets,))
    if np.any(noise_sd <= 0):
        raise PreconditionError("noise_sd must be positive")
    loading = np.asarray(market_loading, dtype=float)
    if loading.ndim == 2:
        if loading.shape != (n_obs, n_assets):
            raise PreconditionError(f"time-varying loadings must have shape {(n_obs, n_assets)}")
    else:
        loading = np.broadcast_to(loading, (n_assets,))

    labels = block_labels(blocks)
    b = noise_sd * np.sqrt(rhos[labels] / (1.0 - rhos[labels]))

    rng = np.random.default_rng(seed)
    m = rng.standard_normal(n_obs)
    g = rng.standard_normal((n_obs, len(sizes)))
    e = rng.standard_normal((n_obs, n_assets))
    x = loading * m[:, None] + b * g[:, labels] + noise_sd * e
    if volatility is not None:
        x = x * np.broadcast_to(np.asarray(volatility, dtype=float), (n_assets,))

    dates = pd.bdate_range(SYNTHETIC_START, periods=n_obs).to_numpy(dtype="datetime64[D]")
    assets = tuple(f"S{i:03d}" for i in range(n_assets))
    return ReturnPanel(dates=dates, assets=assets, returns=x)


def generate_regime_switching(
    blocks,
    regime_lengths: Sequence[int],
    market_levels: Sequence[float],
    total_variance: float = 1.0,
    seed: int = 0,
    volatility=None,
) -> ReturnPanel:
    """Fixed block covariance under a piecewise-constant market loading.

    Within each regime ``x_it = L_k m_t + b_i g_{c(i),t} + s_ik e_it`` where
    ``b_i**2 = rho_c * total_variance`` is the same in every regime and the
    idiosyncratic scale ``s_ik`` absorbs whatever variance the market does
    not take, so every asset keeps ``total_variance``. Block correlations are
    therefore identical across regimes and only the market mode moves.
    """
    sizes = [int(s) for s, _ in blocks]
    n_assets = sum(sizes)
    if len(regime_lengths) != len(market_levels):
        raise PreconditionError("one market level per regime is required")
    labels = block_labels(blocks)
    rho = np.array([float(r) for _, r in blocks])[labels]
    if np.any(rho < 0) or np.any(rho >= 1):
        raise PreconditionError("intra_correlation must lie in [0, 1)")
    levels = np.repeat(np.asarray(market_levels, dtype=float), regime_lengths)
    b2 = rho * total_variance
    s2 = total_variance - levels[:, None] ** 2 - b2[None, :]
    if np.any(s2 <= 0):
        raise PreconditionError("market level too large: no idiosyncratic variance left")
    n_obs = len(levels)
    rng = np.random.default_rng(seed)
    m = rng.standard_normal(n_obs)
    g = rng.standard_normal((n_obs, len(sizes)))
    e = rng.standard_normal((n_obs, n_assets))
    x = levels[:, None] * m[:, None] + np.sqrt(b2) * g[:, labels] + np.sqrt(s2) * e
    if volatility is not None:
        x = x * np.broadcast_to(np.asarray(volatility, dtype=float), (n_assets,))
    dates = pd.bdate_range(SYNTHETIC_START, periods=n_obs).to_numpy(dtype="datetime64[D]")
    assets = tuple(f"S{i:03d}" for i in range(n_assets))
    return ReturnPanel(dates=dates, assets=assets, returns=x)
