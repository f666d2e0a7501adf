"""Base kernels on node embeddings and Gram matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist


@dataclass(frozen=True)
class BaseKernel:
    kind: str = "dot"
    gamma: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("dot", "rbf"):
            raise ValueError(f"unknown base kernel {self.kind!r}")
        if self.kind == "rbf" and self.gamma is not None and self.gamma <= 0:
            raise ValueError("rbf gamma must be positive")

    def with_gamma(self, gamma: float) -> "BaseKernel":
        return BaseKernel(self.kind, gamma)

    def _gamma(self) -> float:
        if self.gamma is None:
            raise ValueError("rbf kernel needs gamma; set it or use median_heuristic_gamma")
        return self.gamma


def kernel_eval(k: BaseKernel, zi: np.ndarray, zj: np.ndarray) -> float:
    zi = np.asarray(zi, dtype=np.float64)
    zj = np.asarray(zj, dtype=np.float64)
    if zi.shape != zj.shape:
        raise ValueError(f"dimension mismatch: {zi.shape} vs {zj.shape}")
    if k.kind == "dot":
        return float(zi @ zj)
    diff = zi - zj
    return float(np.exp(-k._gamma() * (diff @ diff)))


def normalized_kernel_eval(zi: np.ndarray, zj: np.ndarray, eps: float = 1e-12) -> float:
    """Dot product of the two vectors after scaling each to unit length."""
    ni, nj = np.linalg.norm(zi), np.linalg.norm(zj)
    if ni < eps or nj < eps:
        raise ValueError("cannot normalize a near-zero vector")
    return float(np.clip((zi @ zj) / (ni * nj), -1.0, 1.0))


def cross_kernel(k: BaseKernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``K[i, j] = k(a_i, b_j)``."""
    if k.kind == "dot":
        return a @ b.T
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.exp(-k._gamma() * np.maximum(sq, 0.0))


def gram_matrix(z: np.ndarray, k: BaseKernel) -> np.ndarray:
    """Symmetric Gram matrix of the rows of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    g = cross_kernel(k, z, z)
    upper = np.triu(g)
    g = upper + np.triu(g, 1).T
    if k.kind == "rbf":
        np.fill_diagonal(g, 1.0)
    return g


def paired_kernel(k: BaseKernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``k(a_t, b_t)``."""
    if k.kind == "dot":
        return np.einsum("ij,ij->i", a, b)
    diff = a - b
    return np.exp(-k._gamma() * np.einsum("ij,ij->i", diff, diff))


def paired_kernel_grads(k: BaseKernel, a: np.ndarray, b: np.ndarray,
                        values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of each ``k(a_t, b_t)`` with respect to ``a_t`` and ``b_t``."""
    if k.kind == "dot":
        return b, a
    ga = -2.0 * k._gamma() * values[:, None] * (a - b)
    return ga, -ga


def median_heuristic_gamma(z: np.ndarray, max_rows: int = 512,
                           rng: np.random.Generator | None = None) -> float:
    """``1 / (2 sigma^2)`` with ``sigma`` the median pairwise distance of a row sample."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] > max_rows:
        rng = rng if rng is not None else np.random.default_rng(0)
        z = z[rng.choice(z.shape[0], max_rows, replace=False)]
    dists = pdist(z)
    sigma = float(np.median(dists)) if dists.size else 0.0
    if sigma <= 0.0:
        return 1.0
    return 1.0 / (2.0 * sigma * sigma)
