"""Modularity-based community detection on the mesoscopic correlation component.

The modularity matrix is ``C_g`` itself (random and market parts act as the
null model), normalised by the grand sum of the empirical correlation
matrix. ``C_g`` has entries of both signs, so the Louvain gains below are
plain differences of row sums with no non-negativity assumption.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .errors import PreconditionError
from .spectral import CorrelationDecomposition

DEFAULT_RESTARTS = 20


@dataclass(frozen=True)
class ModularityContext:
    B: np.ndarray
    norm: float

    @classmethod
    def from_decomposition(cls, dec: CorrelationDecomposition) -> "ModularityContext":
        norm = float(dec.C.sum())
        if not np.isfinite(norm) or norm <= 0:
            warnings.warn("sum of correlations is not positive; normalising by sum of |C_ij|", stacklevel=2)
            norm = float(np.abs(dec.C).sum())
        return cls(B=dec.C_g, norm=norm)


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    modularity: float
    runs: int = 1
    seed: Optional[int] = None
    history: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_communities(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_communities)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def as_dict(self, assets: Optional[Sequence[str]] = None) -> dict:
        assets = list(assets) if assets is not None else list(range(len(self.labels)))
        return {
            "assignment": {str(a): int(c) for a, c in zip(assets, self.labels)},
            "n_communities": self.n_communities,
            "modularity": self.modularity,
            "runs": self.runs,
            "seed": self.seed,
        }


def modularity_of(ctx: ModularityContext, labels) -> float:
    labels = np.asarray(labels)
    if labels.shape != (ctx.B.shape[0],):
        raise PreconditionError("assignment must cover every asset")
    _, inv = np.unique(labels, return_inverse=True)
    Z = np.zeros((len(labels), inv.max() + 1))
    Z[np.arange(len(labels)), inv] = 1.0
    return float(np.trace(Z.T @ ctx.B @ Z) / ctx.norm)


def wcm_null(w: np.ndarray) -> np.ndarray:
    """Expected weights ``s_i s_j / 2W`` under the weighted configuration model."""
    w = np.asarray(w, dtype=float)
    s = w.sum(axis=1)
    two_w = s.sum()
    if two_w == 0:
        raise PreconditionError("total weight is zero")
    return np.outer(s, s) / two_w


def canonical_labels(labels) -> np.ndarray:
    """Relabel so community 0 is the largest; ties go to the lowest member index."""
    labels = np.asarray(labels)
    uniq, first, inv, counts = np.unique(labels, return_index=True, return_inverse=True, return_counts=True)
    order = np.lexsort((first, -counts))
    rank = np.empty(len(uniq), dtype=int)
    rank[order] = np.arange(len(uniq))
    return rank[inv]


def _local_moves(A: np.ndarray, rng: np.random.Generator, tol: float, trace: Optional[list], q0: float, norm: float):
    """Single-node best moves until a full pass changes nothing.

    Returns the community label of each (super-)node and whether anything moved.
    """
    k = A.shape[0]
    comm = np.arange(k)
    sizes = np.ones(k, dtype=int)
    S = A.copy()  # S[i, c] = sum of A[i, j] over j in community c
    diag = np.diag(A).copy()
    q = q0
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(k):
            a = comm[i]
            own = S[i, a] - diag[i]
            gains = 2.0 * (S[i] - own)
            gains[a] = 0.0
            # empty slots stand for "open a new community"; keep one at most
            empty = sizes == 0
            if sizes[a] == 1:
                gains[empty] = -np.inf
            elif empty.any():
                gains[empty] = -np.inf
                gains[np.flatnonzero(empty)[0]] = -2.0 * own
            order = rng.permutation(k)
            c = order[np.argmax(gains[order])]
            if gains[c] <= tol:
                continue
            comm[i] = c
            sizes[a] -= 1
            sizes[c] += 1
            S[:, a] -= A[:, i]
            S[:, c] += A[:, i]
            moved = moved_any = True
            if trace is not None:
                q += gains[c] / norm
                trace.append(q)
        if not moved:
            return comm, moved_any


def louvain(B: np.ndarray, norm: float, rng: np.random.Generator, record: bool = False):
    """One Louvain run on modularity matrix ``B``; returns (labels, Q trace)."""
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    tol = 1e-12 * max(np.abs(B).max(), 1e-300)
    labels = np.arange(n)
    A = B
    trace = [] if record else None
    q = float(np.trace(B) / norm)
    if record:
        trace.append(q)
    while True:
        comm, moved = _local_moves(A, rng, tol, trace, q, norm)
        if trace:
            q = trace[-1]
        if not moved:
            break
        _, comm = np.unique(comm, return_inverse=True)
        labels = comm[labels]
        Z = np.zeros((A.shape[0], comm.max() + 1))
        Z[np.arange(A.shape[0]), comm] = 1.0
        A = Z.T @ A @ Z
        if A.shape[0] == 1:
            break
    return labels, trace or []


def detect_communities(
    dec: CorrelationDecomposition,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    record: bool = False,
) -> Partition:
    if restarts < 1:
        raise PreconditionError("restarts must be >= 1")
    if len(dec.indices_g) == 0 or not np.any(dec.C_g):
        raise PreconditionError("mesoscopic component is empty; nothing to cluster")
    ctx = ModularityContext.from_decomposition(dec)
    return maximize_modularity(ctx, restarts=restarts, seed=seed, record=record)


def maximize_modularity(ctx: ModularityContext, restarts: int = DEFAULT_RESTARTS, seed: int = 0, record: bool = False) -> Partition:
    """Best of ``restarts`` Louvain runs; ties keep the earliest run."""
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        labels, trace = louvain(ctx.B, ctx.norm, np.random.default_rng(child), record=record)
        labels = canonical_labels(labels)
        q = modularity_of(ctx, labels)
        if best is None or q > best[1] + 1e-12:
            best = (labels, q, trace)
    labels, q, trace = best
    return Partition(labels=labels, modularity=q, runs=restarts, seed=seed, history=tuple(trace))


def partition_stability(partitions: Sequence[Partition]) -> dict:
    """Pairwise adjusted Rand index and normalised mutual information."""
    n = len(partitions)
    sizes = {len(p.labels) for p in partitions}
    if len(sizes) > 1:
        raise PreconditionError("partitions cover different asset sets")
    ari = np.eye(n)
    nmi = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            la, lb = partitions[a].labels, partitions[b].labels
            ari[a, b] = ari[b, a] = adjusted_rand_score(la, lb)
            nmi[a, b] = nmi[b, a] = normalized_mutual_info_score(la, lb)
    return {"ari": ari, "nmi": nmi}


def sector_composition(partition: Partition, assets: Sequence[str], sector: dict) -> dict:
    """Counts of sector labels inside each community; unlabeled assets count as ``"unknown"``."""
    table = {}
    for a, c in zip(assets, partition.labels):
        row = table.setdefault(int(c), {})
        s = sector.get(a, "unknown")
        row[s] = row.get(s, 0) + 1
    return table
