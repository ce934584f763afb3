"""Correlation spectra: Marchenko-Pastur bounds and the random / mesoscopic /
market split of an empirical correlation matrix.

Eigenvalues at or below ``lambda_max`` form the random part. Above the bound,
the leading eigenvalue is the market mode when its eigenvector is (almost)
sign-uniform; everything else above the bound is mesoscopic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import ReturnPanel, WindowSpec, slice_window, standardize, subsample_indices
from .errors import DecompositionError, PreconditionError

DEFAULT_SIGN_THRESHOLD = 0.95
DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class MPBounds:
    lambda_min: float
    lambda_max: float
    kappa: float
    sigma2: float = 1.0

    def as_dict(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "kappa": self.kappa,
            "sigma2": self.sigma2,
        }


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order; ``vectors[:, k]`` pairs with ``values[k]``."""

    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class CorrelationDecomposition:
    C: np.ndarray
    C_r: np.ndarray
    C_g: np.ndarray
    C_m: np.ndarray
    bounds: MPBounds
    eig: EigenSystem
    indices_r: np.ndarray
    indices_g: np.ndarray
    indices_m: np.ndarray
    market_sign_fraction: float

    @property
    def n_assets(self) -> int:
        return self.C.shape[0]

    def component(self, name: str) -> np.ndarray:
        return {"r": self.C_r, "g": self.C_g, "m": self.C_m, "C": self.C}[name]

    def summary(self) -> dict:
        return {
            "n_assets": self.n_assets,
            "eigenvalues": self.eig.values.tolist(),
            "bounds": self.bounds.as_dict(),
            "indices_r": self.indices_r.tolist(),
            "indices_g": self.indices_g.tolist(),
            "indices_m": self.indices_m.tolist(),
            "market_sign_fraction": self.market_sign_fraction,
        }


@dataclass(frozen=True)
class RiskFractions:
    total: float
    frac_r: float
    frac_g: float
    frac_m: float

    def as_array(self) -> np.ndarray:
        return np.array([self.frac_r, self.frac_g, self.frac_m])


@dataclass(frozen=True)
class RiskFractionSeries:
    """Per-window fractions averaged over random asset subsamples.

    ``mean`` and ``draw_sd`` have one row per window and columns
    ``(r, g, m)``; ``window_sd`` is the spread of ``mean`` across windows.
    """

    start_dates: np.ndarray
    end_dates: np.ndarray
    mean: np.ndarray
    draw_sd: np.ndarray
    window_sd: np.ndarray


@dataclass(frozen=True)
class RelativeChange:
    """Norm of entrywise relative changes between two matrices.

    ``value`` is the per-entry average ``(sum |d|^p / M)^(1/p)``; ``raw`` is
    the plain p-norm over the same ``included`` entries.
    """

    value: float
    raw: float
    included: int
    excluded: int


def correlation_matrix(rp: ReturnPanel) -> np.ndarray:
    """Pearson correlation of the panel's columns (standardizing if needed)."""
    if rp.n_obs < 2:
        raise PreconditionError("correlation needs T >= 2")
    z = rp if rp.standardized else standardize(rp)
    if z.zero_variance:
        raise PreconditionError(f"zero-variance columns present: {list(z.zero_variance)}")
    x = z.returns
    C = x.T @ x / (x.shape[0] - 1)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def mp_bounds(n_assets: int, n_obs: int, sigma2: float = 1.0) -> MPBounds:
    if n_assets < 1 or n_obs <= n_assets:
        raise PreconditionError(
            f"Marchenko-Pastur bounds need T/N > 1 (got T={n_obs}, N={n_assets})"
        )
    q = n_assets / n_obs
    return MPBounds(
        lambda_min=sigma2 * (1.0 - np.sqrt(q)) ** 2,
        lambda_max=sigma2 * (1.0 + np.sqrt(q)) ** 2,
        kappa=n_obs / n_assets,
        sigma2=sigma2,
    )


def eigensystem(M: np.ndarray) -> EigenSystem:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DecompositionError("matrix has non-finite entries")
    try:
        values, vectors = np.linalg.eigh(0.5 * (M + M.T))
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"eigendecomposition failed: {exc}") from exc
    values, vectors = values[::-1], vectors[:, ::-1]
    # fix the sign so the largest-magnitude entry of each vector is positive
    pivot = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])]
    vectors = vectors * np.where(pivot < 0, -1.0, 1.0)
    return EigenSystem(values=values.copy(), vectors=np.ascontiguousarray(vectors))


def sign_uniformity(v: np.ndarray) -> float:
    """Share of entries carrying the majority sign."""
    n = len(v)
    pos = np.count_nonzero(v > 0)
    neg = np.count_nonzero(v < 0)
    return max(pos, neg) / n


def _partial_sum(eig: EigenSystem, idx: np.ndarray) -> np.ndarray:
    V = eig.vectors[:, idx]
    return (V * eig.values[idx]) @ V.T


def decompose(
    C: np.ndarray,
    bounds: MPBounds,
    sign_threshold: float = DEFAULT_SIGN_THRESHOLD,
) -> CorrelationDecomposition:
    C = np.asarray(C, dtype=float)
    eig = eigensystem(C)
    lam = eig.values
    idx = np.arange(len(lam))
    above = idx[lam > bounds.lambda_max]

    sign_frac = sign_uniformity(eig.vectors[:, 0])
    if len(above) and above[0] == 0 and sign_frac >= sign_threshold:
        indices_m = np.array([0])
        if eig.vectors[:, 0].sum() < 0:
            vectors = eig.vectors.copy()
            vectors[:, 0] *= -1
            eig = EigenSystem(values=lam, vectors=vectors)
    else:
        indices_m = np.array([], dtype=int)
        if len(above):
            warnings.warn(
                f"leading eigenvector is not sign-uniform ({sign_frac:.2%} < "
                f"{sign_threshold:.0%}); no market mode extracted",
                stacklevel=2,
            )
    indices_g = np.setdiff1d(above, indices_m)
    indices_r = idx[lam <= bounds.lambda_max]

    return CorrelationDecomposition(
        C=C,
        C_r=_partial_sum(eig, indices_r),
        C_g=_partial_sum(eig, indices_g),
        C_m=_partial_sum(eig, indices_m),
        bounds=bounds,
        eig=eig,
        indices_r=indices_r,
        indices_g=indices_g,
        indices_m=indices_m,
        market_sign_fraction=float(sign_frac),
    )


def decompose_panel(rp: ReturnPanel, sign_threshold: float = DEFAULT_SIGN_THRESHOLD):
    """Correlation matrix and decomposition of a return panel in one step."""
    C = correlation_matrix(rp)
    return decompose(C, mp_bounds(rp.n_assets, rp.n_obs), sign_threshold=sign_threshold)


def risk_fractions(dec: CorrelationDecomposition) -> RiskFractions:
    lam = dec.eig.values
    total = float(lam.sum())
    parts = [float(lam[i].sum()) / total for i in (dec.indices_r, dec.indices_g, dec.indices_m)]
    return RiskFractions(total, *parts)


def risk_fraction_series(
    rp: ReturnPanel,
    window: WindowSpec,
    size: int,
    draws: int,
    seed: int,
    sign_threshold: float = DEFAULT_SIGN_THRESHOLD,
) -> RiskFractionSeries:
    """Risk fractions over rolling windows, each averaged over ``draws``
    random subsamples of ``size`` assets drawn afresh for every window."""
    windows = slice_window(rp, window)
    if isinstance(windows, ReturnPanel):
        windows = [windows]
    ss = np.random.SeedSequence(seed)
    child_seeds = ss.generate_state(len(windows))
    means, sds = [], []
    for w, sub in enumerate(windows):
        if sub.n_obs <= size:
            raise PreconditionError(
                f"window {w} has {sub.n_obs} observations, too short for {size} assets"
            )
        fr = []
        for idx in subsample_indices(rp.n_assets, size, draws, int(child_seeds[w])):
            dec = decompose_panel(sub.columns(idx), sign_threshold=sign_threshold)
            fr.append(risk_fractions(dec).as_array())
        fr = np.array(fr)
        means.append(fr.mean(axis=0))
        sds.append(fr.std(axis=0, ddof=1) if draws > 1 else np.zeros(3))
    means = np.array(means)
    return RiskFractionSeries(
        start_dates=np.array([w.dates[0] for w in windows]),
        end_dates=np.array([w.dates[-1] for w in windows]),
        mean=means,
        draw_sd=np.array(sds),
        window_sd=means.std(axis=0, ddof=1) if len(windows) > 1 else np.zeros(3),
    )


def relative_change_norm(
    C_prev: np.ndarray,
    C_next: np.ndarray,
    p: float = 1,
    epsilon: float = DEFAULT_EPSILON,
    include_diagonal: bool = True,
) -> RelativeChange:
    C_prev = np.asarray(C_prev, dtype=float)
    C_next = np.asarray(C_next, dtype=float)
    if C_prev.shape != C_next.shape:
        raise ValueError(f"shape mismatch {C_prev.shape} vs {C_next.shape}")
    mask = np.ones(C_prev.shape, dtype=bool)
    if not include_diagonal and C_prev.ndim == 2 and C_prev.shape[0] == C_prev.shape[1]:
        np.fill_diagonal(mask, False)
    considered = int(mask.sum())
    mask &= np.abs(C_prev) > epsilon
    M = int(mask.sum())
    if M == 0:
        raise PreconditionError("every entry excluded by the epsilon guard")
    d = np.abs((C_next[mask] - C_prev[mask]) / C_prev[mask])
    if np.isinf(p):
        raw = value = float(d.max())
    else:
        s = float(np.sum(d**p))
        raw = s ** (1.0 / p)
        value = (s / M) ** (1.0 / p)
    return RelativeChange(value=value, raw=raw, included=M, excluded=considered - M)


def block_average(C_g: np.ndarray, labels, exclude_diagonal: bool = False) -> np.ndarray:
    """Replace every community block of ``C_g`` with its mean.

    With ``exclude_diagonal`` the within-community means skip the diagonal
    and the diagonal itself is replaced by the community's mean diagonal.
    """
    C_g = np.asarray(C_g, dtype=float)
    labels = np.asarray(labels)
    n = C_g.shape[0]
    if labels.shape != (n,):
        raise PreconditionError("partition does not cover every asset")
    ids = np.unique(labels)
    Z = (labels[:, None] == ids[None, :]).astype(float)
    sizes = Z.sum(axis=0)
    if np.any(sizes == 0):
        raise PreconditionError("empty community")
    sums = Z.T @ C_g @ Z
    counts = np.outer(sizes, sizes)
    if not exclude_diagonal:
        means = sums / counts
        return Z @ means @ Z.T

    diag_sums = Z.T @ np.diag(C_g)
    within = np.diag(sums) - diag_sums
    within_counts = sizes * (sizes - 1)
    means = sums / counts
    np.fill_diagonal(means, np.divide(within, within_counts, out=np.zeros_like(within), where=within_counts > 0))
    out = Z @ means @ Z.T
    pos = np.searchsorted(ids, labels)
    np.fill_diagonal(out, (diag_sums / sizes)[pos])
    return out
