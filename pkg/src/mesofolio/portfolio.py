"""Minimum-variance allocation on empirical and spectrally filtered covariances.

Filtered covariances are rebuilt from a correlation component and the
empirical volatilities, ``sigma_ij = C_ij^(f) * s_i * s_j``, with the
diagonal reset to the empirical variances ``s_i**2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import qp
from .data import ReturnPanel
from .errors import InfeasibleError, PreconditionError, SingularCovarianceError
from .spectral import CorrelationDecomposition, block_average

RIDGE_CONDITION = 1e12
RIDGE_SCALE = 1e-10
MAX_CONDITION = 1e14

SOURCES = ("empirical", "rmt-noise-free", "mesoscopic", "block-averaged")
STRATEGY_SOURCE = {
    "markowitz": "empirical",
    "equal": "empirical",
    "rmt": "rmt-noise-free",
    "mesoscopic": "mesoscopic",
    "community": "mesoscopic",
}


@dataclass(frozen=True)
class CovarianceInput:
    sigma: np.ndarray
    source: str = "empirical"
    components: tuple = ()
    vols: Optional[np.ndarray] = None
    ridge: float = 0.0

    @property
    def n_assets(self) -> int:
        return self.sigma.shape[0]


@dataclass
class WeightVector:
    weights: np.ndarray
    strategy: str
    short_allowed: bool = True
    target_return: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)

    def __len__(self):
        return len(self.weights)

    def as_dict(self, assets: Optional[Sequence[str]] = None) -> dict:
        assets = list(assets) if assets is not None else [str(i) for i in range(len(self))]
        return {
            "strategy": self.strategy,
            "short_allowed": self.short_allowed,
            "target_return": self.target_return,
            "effective_size": effective_size(self),
            "weights": {str(a): float(w) for a, w in zip(assets, self.weights)},
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class FrontierPoint:
    target_return: float
    weights: WeightVector
    predicted_variance: float


@dataclass(frozen=True)
class TwoAssetShift:
    w1_star: float
    w1_adj: float
    delta: float

    @property
    def sign(self) -> int:
        return int(np.sign(self.delta))


def _matrix(sigma) -> np.ndarray:
    return sigma.sigma if isinstance(sigma, CovarianceInput) else np.asarray(sigma, dtype=float)


def _weights(w) -> np.ndarray:
    return w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def mean_vector(rp: ReturnPanel) -> np.ndarray:
    if rp.n_obs < 1:
        raise PreconditionError("mean needs at least one observation")
    return rp.returns.mean(axis=0)


def volatilities(rp: ReturnPanel) -> np.ndarray:
    """Sample standard deviations (divisor T-1) of the raw returns."""
    return rp.returns.std(axis=0, ddof=1)


def _with_ridge(sigma: np.ndarray) -> tuple:
    cond = np.linalg.cond(sigma)
    if np.isfinite(cond) and cond <= RIDGE_CONDITION:
        return sigma, 0.0
    ridge = RIDGE_SCALE * np.trace(sigma) / sigma.shape[0]
    return sigma + ridge * np.eye(sigma.shape[0]), ridge


def build_covariance(
    dec: CorrelationDecomposition,
    vols: np.ndarray,
    source: str = "empirical",
    labels=None,
    raw_diagonal: bool = False,
) -> CovarianceInput:
    """Covariance built from a correlation component and volatilities ``vols``.

    ``raw_diagonal=True`` keeps the component's own diagonal instead of the
    empirical variances (sensitivity runs only).
    """
    vols = np.asarray(vols, dtype=float)
    if source == "empirical":
        corr, parts = dec.C, ("C",)
    elif source == "rmt-noise-free":
        corr, parts = dec.C_g + dec.C_m, ("C_g", "C_m")
    elif source == "mesoscopic":
        corr, parts = dec.C_g, ("C_g",)
    elif source == "block-averaged":
        if labels is None:
            raise PreconditionError("block-averaged covariance needs a partition")
        corr, parts = block_average(dec.C_g, labels), ("C_g", "partition")
    else:
        raise ValueError(f"unknown covariance source {source!r}")
    sigma = corr * np.outer(vols, vols)
    if source != "empirical" and not raw_diagonal:
        np.fill_diagonal(sigma, vols**2)
    sigma = 0.5 * (sigma + sigma.T)
    ridge = 0.0
    if source != "empirical":
        sigma, ridge = _with_ridge(sigma)
    return CovarianceInput(sigma=sigma, source=source, components=parts, vols=vols, ridge=ridge)


def equal_weights(n: int) -> WeightVector:
    if n < 1:
        raise PreconditionError("need at least one asset")
    return WeightVector(np.full(n, 1.0 / n), strategy="equal", short_allowed=False)


def _inverse_apply(S: np.ndarray, rhs: np.ndarray, max_condition: float) -> np.ndarray:
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularCovarianceError(f"covariance is singular or ill-conditioned (cond={cond:.3g})")
    return np.linalg.solve(S, rhs)


def gmv(sigma, strategy: str = "markowitz", max_condition: float = MAX_CONDITION) -> WeightVector:
    """Global minimum-variance weights ``S^-1 1 / (1' S^-1 1)``."""
    S = _matrix(sigma)
    x = _inverse_apply(S, np.ones(S.shape[0]), max_condition)
    return WeightVector(x / x.sum(), strategy=strategy, short_allowed=True)


def frontier_constants(sigma, mu) -> dict:
    S = _matrix(sigma)
    mu = np.asarray(mu, dtype=float)
    inv = _inverse_apply(S, np.column_stack([np.ones(len(mu)), mu]), MAX_CONDITION)
    inv1, invmu = inv[:, 0], inv[:, 1]
    A = float(mu @ invmu)
    B = float(np.sum(invmu))
    C = float(np.sum(inv1))
    return {"A": A, "B": B, "C": C, "Delta": C * A - B * B, "inv1": inv1, "invmu": invmu}


def frontier_point(sigma, mu, target: float, strategy: str = "markowitz") -> FrontierPoint:
    """Minimum-variance portfolio with expected return ``target`` (short selling allowed)."""
    S = _matrix(sigma)
    k = frontier_constants(S, mu)
    if abs(k["Delta"]) <= 1e-12 * max(abs(k["A"] * k["C"]), 1e-300):
        warnings.warn("expected returns are all equal; falling back to the GMV portfolio", stacklevel=2)
        w = gmv(S, strategy=strategy)
    else:
        b = (k["A"] - target * k["B"]) / k["Delta"]
        c = (target * k["C"] - k["B"]) / k["Delta"]
        w = WeightVector(b * k["inv1"] + c * k["invmu"], strategy=strategy, short_allowed=True)
    w.target_return = float(target)
    return FrontierPoint(float(target), w, float(w.weights @ S @ w.weights))


def _solve(Q, a, r, target, no_short, tol):
    """Shared QP path: budget row ``a``, optional return row ``r``."""
    rows, rhs = [a], [1.0]
    if target is not None:
        rows.append(r)
        rhs.append(float(target))
    A, b = np.vstack(rows), np.array(rhs)
    if not no_short:
        return qp.solve_equality_qp(Q, A, b)
    if target is None:
        if np.allclose(a, 1.0):
            x0 = qp.project_simplex(qp.solve_equality_qp(Q, A, b).x)
        else:
            x0 = 1.0 / (a * len(a))
    else:
        x0 = qp.two_point_start(a, r, float(target))
    return qp.solve_nonneg_qp(Q, A, b, x0, tol=tol)


def solve_constrained(
    sigma,
    mu=None,
    target: Optional[float] = None,
    no_short: bool = False,
    strategy: str = "markowitz",
    tol: float = qp.KKT_TOL,
) -> WeightVector:
    """Minimum variance with budget, optional return target and optional ``w >= 0``."""
    S = _matrix(sigma)
    n = S.shape[0]
    if target is not None and mu is None:
        raise PreconditionError("a return target needs expected returns mu")
    r = None if mu is None else np.asarray(mu, dtype=float)
    res = _solve(S, np.ones(n), r, target, no_short, tol)
    w = res.x
    if no_short:
        w = np.maximum(w, 0.0)
    return WeightVector(
        w,
        strategy=strategy,
        short_allowed=not no_short,
        target_return=None if target is None else float(target),
        diagnostics={"kkt": res.kkt, "iterations": res.iterations},
    )


def community_matrix(sigma, labels) -> tuple:
    """Reduced covariance over per-asset community weights.

    Diagonal terms are ``N_c * mean variance + N_c (N_c - 1) * mean
    within-community covariance``; off-diagonal terms are ``N_c N_k`` times
    the mean covariance between the two communities.
    """
    S = _matrix(sigma)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    Z = (labels[:, None] == ids[None, :]).astype(float)
    sizes = Z.sum(axis=0)
    block_sums = Z.T @ S @ Z
    var_sums = Z.T @ np.diag(S)
    mean_var = var_sums / sizes
    pairs = sizes * (sizes - 1)
    mean_within = np.divide(np.diag(block_sums) - var_sums, pairs, out=np.zeros_like(pairs), where=pairs > 0)
    mean_between = block_sums / np.outer(sizes, sizes)
    M = np.outer(sizes, sizes) * mean_between
    np.fill_diagonal(M, sizes * mean_var + pairs * mean_within)
    return M, sizes, Z


def community_gmv(
    sigma_g,
    labels,
    mu=None,
    target: Optional[float] = None,
    no_short: bool = False,
    tol: float = qp.KKT_TOL,
) -> WeightVector:
    """Minimum variance with one common weight per community.

    Solves for the per-asset weight ``w_c`` of each community under the
    budget ``sum_c N_c w_c = 1`` and expands it back to all assets.
    """
    labels = np.asarray(labels)
    S = _matrix(sigma_g)
    if labels.shape != (S.shape[0],):
        raise PreconditionError("partition must cover every asset")
    if target is not None and mu is None:
        raise PreconditionError("a return target needs expected returns mu")
    M, sizes, Z = community_matrix(S, labels)
    r = None
    if mu is not None:
        # N_c times the community's equal-weighted mean return
        r = Z.T @ np.asarray(mu, dtype=float)
    if not no_short and np.linalg.cond(M) > MAX_CONDITION:
        raise SingularCovarianceError("reduced community covariance is singular")
    if target is not None and not no_short and len(sizes) > 1 and np.ptp(r / sizes) <= 1e-14:
        raise InfeasibleError("community mean returns are all equal; target cannot be imposed")
    res = _solve(M, sizes, r, target, no_short, tol)
    wc = np.maximum(res.x, 0.0) if no_short else res.x
    w = Z @ wc
    return WeightVector(
        w,
        strategy="community",
        short_allowed=not no_short,
        target_return=None if target is None else float(target),
        diagnostics={"kkt": res.kkt, "community_weights": wc.tolist(), "community_sizes": sizes.tolist()},
    )


def effective_size(w) -> float:
    """Inverse participation ratio ``1 / sum w_i**2`` of a fully invested portfolio.

    Evaluated as ``(sum x)**2 / sum x**2`` with ``x = w / max|w|``, which is
    the same number whenever the weights sum to one but is exact for equal
    weights (every ``x_i`` is then 1).
    """
    x = _weights(w)
    scale = np.abs(x).max()
    if scale == 0:
        raise PreconditionError("all weights are zero")
    x = x / scale
    return float(np.sum(x) ** 2 / np.sum(x**2))


def gmv_spectral_split(sigma, dec: CorrelationDecomposition) -> tuple:
    """Split the GMV weights along the random / mesoscopic / market eigenvalues.

    With ``S = D C D`` (``D`` the volatilities), ``S^-1 = D^-1 V L^-1 V' D^-1``
    and the inverse eigenvalues are grouped by the decomposition's index
    sets. The three returned vectors sum to the GMV weights.
    """
    S = _matrix(sigma)
    vols = np.sqrt(np.diag(S))
    if not np.allclose(S, dec.C * np.outer(vols, vols), rtol=1e-8, atol=1e-12 * vols.max() ** 2):
        raise PreconditionError("covariance does not match the decomposed correlation matrix")
    lam, V = dec.eig.values, dec.eig.vectors
    if np.any(lam <= 0) or lam[-1] / lam[0] < 1.0 / MAX_CONDITION:
        raise SingularCovarianceError("correlation matrix is singular")
    u = V.T @ (1.0 / vols)
    parts = []
    for idx in (dec.indices_r, dec.indices_g, dec.indices_m):
        parts.append((V[:, idx] @ (u[idx] / lam[idx])) / vols)
    norm = sum(p.sum() for p in parts)
    return tuple(p / norm for p in parts)


def two_asset_shift(sigma1: float, sigma2: float, c12_empirical: float, c12_mesoscopic: float) -> TwoAssetShift:
    """Two-asset GMV weight on asset 1 with and without the market covariance.

    ``c12_empirical`` is the (noise-free) correlation including the market
    mode; the market covariance is ``(c12_empirical - c12_mesoscopic) s1 s2``.
    """
    s1s2 = sigma1 * sigma2
    tot = sigma1**2 + sigma2**2
    den_star = tot - 2.0 * c12_empirical * s1s2
    den_adj = tot - 2.0 * c12_mesoscopic * s1s2
    if abs(den_star) < 1e-15 * tot or abs(den_adj) < 1e-15 * tot:
        raise SingularCovarianceError("degenerate two-asset problem (perfect correlation, equal variances)")
    w_star = (sigma2**2 - c12_empirical * s1s2) / den_star
    w_adj = (sigma2**2 - c12_mesoscopic * s1s2) / den_adj
    market_cov = (c12_empirical - c12_mesoscopic) * s1s2
    # exact difference; numerator reduces to market_cov * (s2^2 - s1^2)
    delta = market_cov * (sigma2**2 - sigma1**2) / (den_star * den_adj)
    return TwoAssetShift(float(w_star), float(w_adj), float(delta))
