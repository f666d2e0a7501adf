"""Sparse graph operators: renormalized adjacency, powers, hop masks, SpMM.

Every sparse matrix handled here is a ``scipy.sparse.csr_array`` kept in
canonical form (sorted column indices, no duplicates, no stored zeros), so
two matrices with the same pattern compare equal on ``indptr``/``indices``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.sparse as sp

CsrMatrix = sp.csr_array

MASK_MODES = ("cumulative", "exact")


def canonical(a) -> CsrMatrix:
    """Return a canonical CSR copy of ``a``."""
    out = sp.csr_array(a, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def pattern(a) -> CsrMatrix:
    """0/1 matrix with the sparsity pattern of ``a``."""
    out = canonical(a)
    out.data[:] = 1.0
    return out


def _check_square(a, what: str = "matrix") -> int:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square, got shape {a.shape}")
    return a.shape[0]


def check_simple_graph(adj) -> None:
    """Raise ValueError unless ``adj`` is a symmetric 0/1 matrix with zero diagonal."""
    _check_square(adj, "adjacency")
    a = canonical(adj)
    if a.nnz and not np.all(a.data == 1.0):
        raise ValueError("adjacency must be binary")
    if np.any(a.diagonal() != 0):
        raise ValueError("adjacency must have a zero diagonal")
    diff = canonical(a - a.T)
    if diff.nnz:
        raise ValueError("adjacency pattern is not symmetric")


def renormalized_adjacency(adj) -> CsrMatrix:
    """``D~^{-1/2} (A + I) D~^{-1/2}`` for a simple undirected graph."""
    check_simple_graph(adj)
    n = adj.shape[0]
    a_tilde = canonical(adj) + sp.eye_array(n, format="csr")
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags_array(1.0 / np.sqrt(deg))
    return canonical(d_inv_sqrt @ a_tilde @ d_inv_sqrt)


def sparse_power(a, h: int) -> CsrMatrix:
    """``a**h`` by repeated SpGEMM; no thresholding of small entries."""
    _check_square(a)
    if int(h) != h or h < 1:
        raise ValueError(f"power must be a positive integer, got {h}")
    base = canonical(a)
    out = base.copy()
    for _ in range(int(h) - 1):
        out = canonical(out @ base)
    return out


def hop_masks(adj, H: int, mode: str = "cumulative") -> list[CsrMatrix]:
    """Hop-indicator masks ``M^(1..H)`` from BFS shortest-path distances.

    cumulative: ``M^(h)(i, j) = 1`` iff ``d(i, j) <= h`` (diagonal included).
    exact: ``M^(h)(i, j) = 1`` iff ``d(i, j) == h``; the diagonal is in no mask.

    The BFS runs from all sources at once, one sparse frontier per level, so
    cost is proportional to the number of pairs within distance ``H``.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    if H < 1:
        raise ValueError("H must be >= 1")
    check_simple_graph(adj)
    n = adj.shape[0]
    a = pattern(adj)
    reached = sp.eye_array(n, format="csr")
    frontier = reached
    levels = []
    for _ in range(H):
        nxt = pattern(frontier @ a) if frontier.nnz else frontier
        new = canonical(nxt - nxt.multiply(reached))
        new.data[:] = 1.0
        reached = pattern(reached + new)
        frontier = new
        levels.append(new)
    if mode == "exact":
        return levels
    masks = []
    acc = sp.eye_array(n, format="csr")
    for level in levels:
        acc = pattern(acc + level)
        masks.append(acc)
    return masks


def hadamard_mask(a, mask) -> CsrMatrix:
    """Entries of ``a`` where ``mask`` is 1."""
    if a.shape != mask.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {mask.shape}")
    m = canonical(mask)
    if m.nnz and not np.all(m.data == 1.0):
        raise ValueError("mask values must be 0 or 1")
    return canonical(canonical(a).multiply(m))


class SpmmCounter:
    """Number of sparse-dense products issued while the counter is active."""

    def __init__(self) -> None:
        self.calls = 0


_local = threading.local()


@contextmanager
def counting_spmm() -> Iterator[SpmmCounter]:
    """Count ``spmm_dense`` calls made by the current thread inside the block."""
    counter = SpmmCounter()
    previous = getattr(_local, "counter", None)
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = previous


def spmm_dense(a, x: np.ndarray) -> np.ndarray:
    """Sparse ``a`` times dense ``x``."""
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter.calls += 1
    return np.asarray(a @ x, dtype=np.float64)


def nadaraya_watson_dense(k: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Kernel-weighted average ``g(i) = sum_u k(u, i) p(u) / sum_u k(u, i)``.

    Dense reference for the smoothing that ``Abar^h @ X`` approximates.
    """
    k = np.asarray(k, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("kernel matrix must be square")
    if p.shape[0] != k.shape[0]:
        raise ValueError(f"shape mismatch: {k.shape} vs {p.shape}")
    weight = k.sum(axis=0)
    if np.any(weight <= 0):
        raise ValueError("kernel weights must have a positive sum for every node")
    return (k.T @ p) / weight[:, None]


def bfs_distances(adj, source: int) -> np.ndarray:
    """Unweighted shortest-path distances from ``source``; -1 when unreachable."""
    a = canonical(adj)
    dist = np.full(a.shape[0], -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source])
    d = 0
    while frontier.size:
        d += 1
        nbrs = np.concatenate([a.indices[a.indptr[u]:a.indptr[u + 1]] for u in frontier])
        nbrs = np.unique(nbrs)
        nbrs = nbrs[dist[nbrs] < 0]
        dist[nbrs] = d
        frontier = nbrs
    return dist


@dataclass
class HopOperators:
    """Precomputed ``P_h = Abar^h ⊙ M^(h)`` for ``h = 1..H``."""

    H: int
    masked_powers: list[CsrMatrix]
    mask_mode: str = "cumulative"
    _union: CsrMatrix | None = field(default=None, repr=False)
    _stacked: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if len(self.masked_powers) != self.H:
            raise ValueError("need exactly H masked powers")
        shapes = {p.shape for p in self.masked_powers}
        if len(shapes) != 1:
            raise ValueError("masked powers must share one shape")
        self._build_union()

    @property
    def shape(self) -> tuple[int, int]:
        return self.masked_powers[0].shape

    def _build_union(self) -> None:
        union = pattern(sum(pattern(p) for p in self.masked_powers))
        # probe holds 1-based slot numbers, so masking it by P_h yields P_h's slots
        probe = union.copy()
        probe.data = np.arange(1, union.nnz + 1, dtype=np.float64)
        stacked = np.zeros((self.H, union.nnz))
        for h, p in enumerate(self.masked_powers):
            p = canonical(p)
            slots = canonical(pattern(p).multiply(probe)).data.astype(np.int64) - 1
            stacked[h, slots] = p.data
        self._union = union
        self._stacked = stacked

    def combined(self, weights: np.ndarray) -> CsrMatrix:
        """``sum_h weights[h] * P_h`` on the precomputed union pattern."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.H,):
            raise ValueError(f"expected {self.H} hop weights, got {weights.shape}")
        out = self._union.copy()
        out.data = weights @ self._stacked
        return out
