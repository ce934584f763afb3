"""In-sample estimation, out-of-sample evaluation and reliability tables.

Reliability compares a portfolio's predicted risk with the realized standard
deviation of its fixed-weight returns over the following window:
``R = |realized - predicted| / predicted``. By default every strategy's risk
is predicted with the in-sample empirical covariance; ``predict_with="strategy"``
uses the (possibly filtered) covariance the strategy optimized on instead.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .communities import DEFAULT_RESTARTS, detect_communities
from .data import ReturnPanel, WindowSpec, split_window, subsample_indices
from .errors import InfeasibleError, MesofolioError, PreconditionError
from .portfolio import (
    STRATEGY_SOURCE,
    CovarianceInput,
    WeightVector,
    build_covariance,
    community_gmv,
    effective_size,
    equal_weights,
    frontier_point,
    gmv,
    mean_vector,
    solve_constrained,
    volatilities,
)
from .spectral import decompose_panel

STRATEGIES = ("equal", "markowitz", "rmt", "mesoscopic", "community")
SUMMARY_STATS = ("min", "q1", "median", "mean", "q3")


@dataclass(frozen=True)
class StrategySpec:
    name: str
    no_short: bool = False
    target_return: Optional[float] = None
    frontier: Optional[int] = None

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}; choose from {STRATEGIES}")

    @property
    def label(self) -> str:
        return f"{self.name}{'-long' if self.no_short else ''}"


class BacktestError(MesofolioError):
    """An upstream failure tagged with its grid position."""

    code = "backtest"

    def __init__(self, message: str, context: dict, cause: Exception):
        super().__init__(f"{message} at {context}: {cause}")
        self.context = context
        self.cause = cause


def predicted_risk(w, sigma_in) -> float:
    """Predicted portfolio volatility ``sqrt(w' S w)``."""
    x = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    S = sigma_in.sigma if isinstance(sigma_in, CovarianceInput) else np.asarray(sigma_in, dtype=float)
    if S.shape != (len(x), len(x)):
        raise PreconditionError(f"weights of length {len(x)} do not match covariance {S.shape}")
    var = float(x @ S @ x)
    if var < 0:
        if var < -1e-10:
            warnings.warn(f"negative predicted variance {var:.3g} clamped to zero", stacklevel=2)
        var = 0.0
    return float(np.sqrt(var))


def realized_risk(w, rp_out: ReturnPanel) -> float:
    """Sample standard deviation of the buy-and-hold-weights return series."""
    x = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if rp_out.n_obs < 2:
        raise PreconditionError("out-of-sample window needs at least 2 observations")
    if rp_out.n_assets != len(x):
        raise PreconditionError("out-of-sample panel and weights cover different assets")
    return float(np.std(rp_out.returns @ x, ddof=1))


def reliability(predicted: float, realized: float) -> float:
    return abs(realized - predicted) / predicted


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {k: float("nan") for k in SUMMARY_STATS}
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "mean": float(v.mean()), "q3": float(q3)}


class Cell:
    """In-sample estimates shared by every strategy evaluated on one subsample."""

    def __init__(self, rp_in: ReturnPanel, restarts: int = DEFAULT_RESTARTS, seed: int = 0, sign_threshold: float = 0.95):
        self.rp_in = rp_in
        self.dec = decompose_panel(rp_in, sign_threshold=sign_threshold)
        self.vols = volatilities(rp_in)
        self.mu = mean_vector(rp_in)
        self.restarts = restarts
        self.seed = seed
        self._cov = {}
        self._partition = None

    def covariance(self, source: str) -> CovarianceInput:
        if source not in self._cov:
            self._cov[source] = build_covariance(self.dec, self.vols, source)
        return self._cov[source]

    @property
    def partition(self):
        if self._partition is None:
            self._partition = detect_communities(self.dec, restarts=self.restarts, seed=self.seed)
        return self._partition

    def weights(self, name: str, no_short: bool = False, target: Optional[float] = None) -> WeightVector:
        n = self.rp_in.n_assets
        if name == "equal":
            return equal_weights(n)
        sigma = self.covariance(STRATEGY_SOURCE[name])
        if name == "community":
            return community_gmv(sigma, self.partition.labels, mu=self.mu, target=target, no_short=no_short)
        if no_short:
            return solve_constrained(sigma, self.mu, target=target, no_short=True, strategy=name)
        if target is None:
            return gmv(sigma, strategy=name)
        return frontier_point(sigma, self.mu, target, strategy=name).weights

    def evaluate(self, w: WeightVector, rp_out: ReturnPanel, predict_with: str = "empirical") -> dict:
        if predict_with not in ("empirical", "strategy"):
            raise ValueError(f"predict_with must be 'empirical' or 'strategy', not {predict_with!r}")
        optimized_on = STRATEGY_SOURCE[w.strategy]
        source = optimized_on if predict_with == "strategy" else "empirical"
        pred = predicted_risk(w, self.covariance(source))
        real = realized_risk(w, rp_out)
        return {
            "covariance": optimized_on,
            "prediction_covariance": source,
            "predicted": pred,
            "realized": real,
            "reliability": reliability(pred, real),
            "effective_size": effective_size(w),
        }


@dataclass
class BacktestReport:
    rows: list
    config: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def strategies(self) -> list:
        return sorted({_label(r) for r in self.rows})

    def mean_reliability(self, by=("window", "size", "label")) -> list:
        """Average reliability over draws (and anything not in ``by``)."""
        groups = {}
        for r in self.rows:
            r = {**r, "label": _label(r)}
            groups.setdefault(tuple(r[k] for k in by), []).append(r["reliability"])
        return [dict(zip(by, key), mean_reliability=float(np.mean(v)), count=len(v)) for key, v in sorted(groups.items(), key=lambda kv: _sort_key(kv[0]))]

    def best_short_mode(self) -> list:
        """Per (window, size, strategy): the lower mean reliability of the
        short-allowed and long-only runs, and which of the two it was."""
        best = {}
        for entry in self.mean_reliability(by=("window", "size", "strategy", "no_short")):
            key = (entry["window"], entry["size"], entry["strategy"])
            if key not in best or entry["mean_reliability"] < best[key]["mean_reliability"]:
                best[key] = entry
        return [
            {"window": w, "size": n, "strategy": s, "mean_reliability": e["mean_reliability"], "no_short": e["no_short"]}
            for (w, n, s), e in sorted(best.items(), key=lambda kv: _sort_key(kv[0]))
        ]

    def aggregates(self) -> dict:
        out = {}
        for s in self.strategies():
            vals = [r["reliability"] for r in self.rows if _label(r) == s]
            out[s] = summarize(vals)
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": self.rows,
            "aggregates": self.aggregates(),
            "table": self.mean_reliability(),
            "best_short_mode": self.best_short_mode(),
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_json_default)


def _label(row: dict) -> str:
    return f"{row['strategy']}{'-long' if row['no_short'] else ''}"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _sort_key(key):
    return tuple((0, k) if isinstance(k, (int, float)) and k is not None else (1, str(k)) for k in key)


def row_key(row: dict) -> tuple:
    target = row.get("target")
    return (
        row["window"],
        row["size"],
        row["draw"],
        row["strategy"],
        row["no_short"],
        -np.inf if target is None else target,
    )


def _run_cell(task):
    (rp, window, w_idx, size, draw, idx, strategies, restarts, cell_seed, predict_with, keep_weights) = task
    rp_in, rp_out = split_window(rp, window.t0, window.delta)
    rp_in, rp_out = rp_in.columns(idx), rp_out.columns(idx)
    context = {"window": w_idx, "size": size, "draw": draw}
    rows, failures = [], []
    try:
        cell = Cell(rp_in, restarts=restarts, seed=cell_seed)
    except MesofolioError as exc:
        failures.append({**context, "strategy": None, "error": type(exc).__name__, "message": str(exc)})
        return rows, failures
    for spec in strategies:
        ctx = {**context, "strategy": spec.name, "no_short": spec.no_short}
        try:
            w = cell.weights(spec.name, spec.no_short, spec.target_return)
            row = {**ctx, "target": spec.target_return, **cell.evaluate(w, rp_out, predict_with)}
            if keep_weights:
                row["weights"] = w.weights.tolist()
            rows.append(row)
        except MesofolioError as exc:
            failures.append({**ctx, "error": type(exc).__name__, "message": str(exc)})
    return rows, failures


def run_backtest(
    rp: ReturnPanel,
    windows: Sequence[WindowSpec],
    strategies: Sequence[StrategySpec],
    sizes: Optional[Sequence[int]] = None,
    draws: int = 1,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    predict_with: str = "empirical",
    on_error: str = "raise",
    workers: int = 1,
    keep_weights: bool = False,
) -> BacktestReport:
    """Evaluate every (window, subsample size, draw, strategy) combination.

    Windows are split at ``t0`` into ``[t0 - delta, t0)`` for estimation and
    ``[t0, t0 + delta)`` for evaluation. Subsamples are drawn per window and
    size from ``seed``; the full asset set is used when ``sizes`` is None.
    With ``on_error="record"`` failing cells are listed in
    ``report.failures`` instead of raising.
    """
    sizes = list(sizes) if sizes else [rp.n_assets]
    tasks = []
    for w_idx, window in enumerate(windows):
        for size in sizes:
            if size >= window.delta:
                raise PreconditionError(
                    f"window {w_idx}: {window.delta} in-sample observations do not exceed {size} assets"
                )
            n_draws = 1 if size == rp.n_assets else draws
            sub_seed = int(np.random.SeedSequence([seed, w_idx, size]).generate_state(1)[0])
            for draw, idx in enumerate(subsample_indices(rp.n_assets, size, n_draws, sub_seed)):
                cell_seed = int(np.random.SeedSequence([seed, w_idx, size, draw]).generate_state(1)[0])
                tasks.append((rp, window, w_idx, size, draw, idx, tuple(strategies), restarts, cell_seed, predict_with, keep_weights))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    rows, failures = [], []
    for r, f in results:
        rows.extend(r)
        failures.extend(f)
    if failures and on_error == "raise":
        first = failures[0]
        raise BacktestError("backtest cell failed", {k: first[k] for k in ("window", "size", "draw", "strategy")}, first["message"])
    rows.sort(key=row_key)
    config = {
        "windows": [asdict(w) for w in windows],
        "strategies": [asdict(s) for s in strategies],
        "sizes": sizes,
        "draws": draws,
        "seed": seed,
        "restarts": restarts,
        "predict_with": predict_with,
    }
    return BacktestReport(rows=rows, config=_plain(config), failures=failures)


def _plain(obj):
    return json.loads(json.dumps(obj, default=_json_default))


def frontier_targets(mu, n_targets: int = 30, mode: str = "grid") -> np.ndarray:
    """Return targets from in-sample mean returns.

    ``grid`` spaces ``n_targets`` points evenly over ``[min mu, max mu]``;
    ``quantile`` takes the means' quantiles at evenly spaced levels, so
    ``n_targets=5`` gives min, quartiles and max.
    """
    mu = np.asarray(mu, dtype=float)
    if mode == "grid":
        return np.linspace(mu.min(), mu.max(), n_targets)
    if mode == "quantile":
        return np.quantile(mu, np.linspace(0.0, 1.0, n_targets))
    raise ValueError(f"unknown target mode {mode!r}")


def frontier_reliability(
    rp: ReturnPanel,
    window: WindowSpec,
    strategy: StrategySpec,
    n_targets: int = 30,
    mode: str = "grid",
    targets=None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    predict_with: str = "empirical",
) -> dict:
    """Reliability along the efficient frontier of one in-sample window.

    Targets that cannot be met are skipped and counted under ``skipped``.
    """
    rp_in, rp_out = split_window(rp, window.t0, window.delta)
    cell = Cell(rp_in, restarts=restarts, seed=seed)
    if targets is None:
        targets = frontier_targets(cell.mu, n_targets, mode)
    rows, skipped = [], []
    for t in np.asarray(targets, dtype=float):
        try:
            w = cell.weights(strategy.name, strategy.no_short, float(t))
        except (InfeasibleError, PreconditionError) as exc:
            skipped.append({"target": float(t), "message": str(exc)})
            continue
        rows.append({"target": float(t), "strategy": strategy.name, "no_short": strategy.no_short, **cell.evaluate(w, rp_out, predict_with)})
    return {
        "rows": rows,
        "summary": summarize([r["reliability"] for r in rows]),
        "skipped": len(skipped),
        "skipped_targets": skipped,
    }


def weight_comparison(weights_by_strategy: dict) -> dict:
    """Pairwise L1 distances, distance to 1/N and effective sizes."""
    names = list(weights_by_strategy)
    vecs = {k: (v.weights if isinstance(v, WeightVector) else np.asarray(v, dtype=float)) for k, v in weights_by_strategy.items()}
    lengths = {len(v) for v in vecs.values()}
    if len(lengths) != 1:
        raise PreconditionError("weight vectors cover different asset universes")
    n = lengths.pop()
    l1 = {a: {b: float(np.abs(vecs[a] - vecs[b]).sum()) for b in names} for a in names}
    return {
        "l1": l1,
        "to_equal": {a: float(np.abs(vecs[a] - 1.0 / n).sum()) for a in names},
        "effective_size": {a: effective_size(vecs[a]) for a in names},
    }
