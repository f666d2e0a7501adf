"""Training objectives, each returning ``(loss, dloss/dZ)`` for embeddings ``Z``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import BaseKernel, paired_kernel, paired_kernel_grads
from .layers import row_l2_normalize, row_l2_normalize_backward, softmax_cross_entropy


@dataclass(frozen=True)
class Triplets:
    """Parallel index arrays: ``anchor`` and ``positive`` share a label, ``negative`` does not."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __len__(self) -> int:
        return len(self.anchor)

    def __getitem__(self, sl) -> "Triplets":
        return Triplets(self.anchor[sl], self.positive[sl], self.negative[sl])


def label_similarity(yi, yj):
    """+1 for equal labels, -1 otherwise (vectorized)."""
    out = np.where(np.asarray(yi) == np.asarray(yj), 1, -1)
    return int(out) if out.ndim == 0 else out


def triplet_loss(k_pos, k_neg, alpha: float):
    """Hinge ``max(0, k_neg - k_pos + alpha)``."""
    out = np.maximum(0.0, np.asarray(k_neg, dtype=np.float64) - k_pos + alpha)
    return float(out) if out.ndim == 0 else out


def kernel_loss(z: np.ndarray, triplets: Triplets, kernel: BaseKernel, alpha: float,
                normalize: bool = True) -> tuple[float, np.ndarray]:
    """Mean triplet hinge over kernel values of (optionally unit-normalized) embeddings."""
    if len(triplets) == 0:
        raise ValueError("no triplets")
    if normalize:
        # only rows that appear in a triplet need a direction
        used = np.unique(np.concatenate([triplets.anchor, triplets.positive, triplets.negative]))
        zn = np.zeros_like(z)
        zn[used], norms = row_l2_normalize(z[used])
    else:
        zn = z
    a, p, n = zn[triplets.anchor], zn[triplets.positive], zn[triplets.negative]
    k_pos = paired_kernel(kernel, a, p)
    k_neg = paired_kernel(kernel, a, n)
    hinge = triplet_loss(k_pos, k_neg, alpha)
    loss = float(np.mean(hinge))

    active = (hinge > 0).astype(np.float64) / len(triplets)
    gp_a, gp_p = paired_kernel_grads(kernel, a, p, k_pos)
    gn_a, gn_n = paired_kernel_grads(kernel, a, n, k_neg)
    w = active[:, None]
    grad = np.zeros_like(zn)
    np.add.at(grad, triplets.anchor, w * (gn_a - gp_a))
    np.add.at(grad, triplets.positive, -w * gp_p)
    np.add.at(grad, triplets.negative, w * gn_n)
    if normalize:
        grad[used] = row_l2_normalize_backward(grad[used], zn[used], norms)
    return loss, grad


def softmax_loss(z: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> tuple[float, np.ndarray]:
    return softmax_cross_entropy(z, labels, idx)


def combined_loss(z: np.ndarray, labels: np.ndarray, train_idx: np.ndarray,
                  triplets: Triplets, alpha: float, lam: float = 1.0
                  ) -> tuple[float, np.ndarray, dict[str, float]]:
    """Softmax cross-entropy plus ``lam`` times the dot-kernel triplet loss.

    The triplet term sees unit-normalized embeddings; the softmax term sees the
    raw logits.
    """
    ly, gy = softmax_cross_entropy(z, labels, train_idx)
    if lam == 0.0:
        return ly, gy, {"L_Y": ly, "L_K": 0.0}
    lk, gk = kernel_loss(z, triplets, BaseKernel("dot"), alpha, normalize=True)
    return ly + lam * lk, gy + lam * gk, {"L_Y": ly, "L_K": lk}


def linkpred_loss(z: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of ``sigmoid(<z_i, z_j>)`` over edges and non-edges.

    ``pos`` and ``neg`` are ``(m, 2)`` arrays of node pairs with targets 1 and 0.
    """
    pairs = np.concatenate([pos, neg]).astype(np.int64)
    target = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    if pairs.size == 0:
        raise ValueError("no pairs")
    zi, zj = z[pairs[:, 0]], z[pairs[:, 1]]
    logits = np.einsum("ij,ij->i", zi, zj)
    # softplus(-s) for positives, softplus(s) for negatives
    signed = np.where(target == 1.0, -logits, logits)
    loss = float(np.mean(np.logaddexp(0.0, signed)))
    dlogit = (sigmoid(logits) - target) / len(pairs)
    grad = np.zeros_like(z)
    np.add.at(grad, pairs[:, 0], dlogit[:, None] * zj)
    np.add.at(grad, pairs[:, 1], dlogit[:, None] * zi)
    return loss, grad


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
