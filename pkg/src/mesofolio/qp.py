"""Primal active-set solver for small dense convex QPs of the form

    min  1/2 x'Qx   s.t.  A x = b,  x >= 0 (optional)

which is all the long-only Markowitz family needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InfeasibleError

KKT_TOL = 1e-8


@dataclass
class QPResult:
    x: np.ndarray
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray
    iterations: int
    kkt: dict


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _solve_kkt(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(K, rhs)
        if np.all(np.isfinite(sol)) and np.allclose(K @ sol, rhs, rtol=1e-9, atol=1e-11):
            return sol
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def kkt_residuals(Q, A, b, x, nu, lam, nonneg: bool) -> dict:
    stat = Q @ x - A.T @ nu - lam
    out = {
        "stationarity": float(np.max(np.abs(stat))),
        "primal": float(np.max(np.abs(A @ x - b))),
    }
    if nonneg:
        out["bound_violation"] = float(max(0.0, -x.min()))
        out["dual_violation"] = float(max(0.0, -lam.min()))
        out["complementarity"] = float(np.max(np.abs(lam * x)))
    return out


def solve_equality_qp(Q: np.ndarray, A: np.ndarray, b: np.ndarray) -> QPResult:
    n, m = Q.shape[0], A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = _solve_kkt(K, np.concatenate([np.zeros(n), b]))
    x, nu = sol[:n], -sol[n:]
    lam = np.zeros(n)
    return QPResult(x, nu, lam, 1, kkt_residuals(Q, A, b, x, nu, lam, False))


def solve_nonneg_qp(
    Q: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    tol: float = KKT_TOL,
    max_iter: int | None = None,
) -> QPResult:
    """Active-set iterations from the feasible point ``x0``.

    The working set holds the indices pinned at zero. Each iteration solves
    the equality-constrained step on the free variables; a blocking bound is
    added on a partial step, and the most negative bound multiplier is
    released at a stationary point.
    """
    Q = np.asarray(Q, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n, m = Q.shape[0], A.shape[0]
    if max_iter is None:
        max_iter = 100 * n
    x = np.where(x0 > 0, x0, 0.0).astype(float)
    if np.max(np.abs(A @ x - b)) > 1e-8:
        raise InfeasibleError("starting point violates the equality constraints")
    working = x <= 0
    scale = max(np.abs(np.diag(Q)).max(), 1e-300)

    for it in range(1, max_iter + 1):
        free = np.flatnonzero(~working)
        g = Q @ x
        Qf, Af = Q[np.ix_(free, free)], A[:, free]
        K = np.block([[Qf, Af.T], [Af, np.zeros((m, m))]])
        sol = _solve_kkt(K, np.concatenate([-g[free], np.zeros(m)]))
        p_free, nu = sol[: len(free)], -sol[len(free):]

        if np.max(np.abs(p_free), initial=0.0) <= 1e-12 * max(1.0, np.abs(x).max()):
            lam = g - A.T @ nu
            lam[free] = 0.0
            pinned = np.flatnonzero(working)
            if len(pinned) == 0 or lam[pinned].min() >= -tol * scale:
                lam = np.where(working, np.maximum(lam, 0.0), 0.0)
                return QPResult(x, nu, lam, it, kkt_residuals(Q, A, b, x, nu, lam, True))
            working[pinned[np.argmin(lam[pinned])]] = False
            continue

        p = np.zeros(n)
        p[free] = p_free
        alpha, blocking = 1.0, None
        neg = free[p_free < 0]
        if len(neg):
            ratios = -x[neg] / p[neg]
            j = np.argmin(ratios)
            if ratios[j] < 1.0:
                alpha, blocking = ratios[j], neg[j]
        x = x + alpha * p
        if blocking is not None:
            x[blocking] = 0.0
            working[blocking] = True
        x[working] = 0.0
    raise ConvergenceError(f"active-set QP did not converge in {max_iter} iterations")


def two_point_start(a: np.ndarray, r: np.ndarray, target: float) -> np.ndarray:
    """Feasible nonnegative point for ``a'x = 1, r'x = target``.

    Mixes the two coordinates with the lowest and highest return per unit of
    budget ``r_i / a_i``.
    """
    rate = r / a
    lo, hi = int(np.argmin(rate)), int(np.argmax(rate))
    span = rate[hi] - rate[lo]
    tol = 1e-12 * max(1.0, np.abs(rate).max())
    if target < rate[lo] - tol or target > rate[hi] + tol:
        raise InfeasibleError(
            f"target return {target:.6g} outside the attainable range "
            f"[{rate[lo]:.6g}, {rate[hi]:.6g}] without short selling"
        )
    x = np.zeros(len(a))
    if span <= tol:
        x[lo] = 1.0 / a[lo]
        return x
    theta = np.clip((rate[hi] - target) / span, 0.0, 1.0)
    x[lo] += theta / a[lo]
    x[hi] += (1.0 - theta) / a[hi]
    return x
