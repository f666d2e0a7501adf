"""Inference rules and metrics.

Argmax ties resolve to the smallest class index everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .kernels import BaseKernel, cross_kernel
from .layers import row_l2_normalize


def class_mean_similarity(z_train: np.ndarray, y_train: np.ndarray, z_query: np.ndarray,
                          kernel: BaseKernel, normalize: bool = True,
                          n_classes: int | None = None, chunk: int = 2048) -> np.ndarray:
    """``mu[u, y]``: mean kernel value between query ``u`` and training nodes of class ``y``."""
    y_train = np.asarray(y_train, dtype=np.int64)
    n_classes = int(y_train.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(y_train, minlength=n_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"classes {missing} have no training nodes")
    if normalize:
        z_train = row_l2_normalize(z_train)[0]
        # a zero query row scores 0 for every class and falls to the tie rule
        norms = np.linalg.norm(z_query, axis=1, keepdims=True)
        z_query = np.divide(z_query, norms, out=np.zeros_like(z_query), where=norms > 0)
    onehot = np.zeros((len(y_train), n_classes))
    onehot[np.arange(len(y_train)), y_train] = 1.0
    if kernel.kind == "dot":
        # mean of dot products equals dot with the class-mean embedding
        centroids = (onehot.T @ z_train) / counts[:, None]
        return z_query @ centroids.T
    out = np.empty((len(z_query), n_classes))
    for start in range(0, len(z_query), chunk):
        k = cross_kernel(kernel, z_query[start:start + chunk], z_train)
        out[start:start + chunk] = (k @ onehot) / counts
    return out


def nearest_centroid_predict(z_train: np.ndarray, y_train: np.ndarray, z_test: np.ndarray,
                             kernel: BaseKernel, normalize: bool = True,
                             n_classes: int | None = None) -> np.ndarray:
    mu = class_mean_similarity(z_train, y_train, z_test, kernel, normalize, n_classes)
    return np.argmax(mu, axis=1)


def softmax_predict(logits: np.ndarray) -> np.ndarray:
    # softmax is monotone per row, so the logit argmax is the prediction
    return np.argmax(np.asarray(logits), axis=1)


def accuracy(pred: np.ndarray, truth: np.ndarray, idx=None) -> float:
    """Fraction of correct predictions, over ``idx`` when given (per-node arrays)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if idx is not None:
        idx = np.asarray(idx, dtype=np.int64)
        pred, truth = pred[idx], truth[idx]
    if len(truth) == 0:
        raise ValueError("empty index set")
    return float(np.mean(pred == truth))


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if labels.all() or not labels.any():
        raise ValueError("need at least one positive and one negative")
    return scores, labels


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores, labels = _check_binary(scores, labels)
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve.

    ``sum_k (R_k - R_{k-1}) P_k`` over distinct score thresholds, highest first.
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last position of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = tp[last].astype(np.float64)
    precision = tp / (last + 1)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
