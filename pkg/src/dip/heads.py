"""Modality fusion, task heads and training losses."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def fuse(Z_v: Tensor, Z_t: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Linear projection of the concatenated modality states."""
    if Z_v.shape[0] != Z_t.shape[0]:
        raise ValueError("fuse: modalities disagree on node count")
    if Z_v.shape[1] + Z_t.shape[1] != w.shape[0]:
        raise ValueError(f"fuse: expected {w.shape[0]} input columns")
    return ad.affine(ad.concat_cols(Z_v, Z_t), w, b)


def nc_logits(Z: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    if Z.shape[1] != w1.shape[0]:
        raise ValueError(f"classifier expects {w1.shape[0]} columns, got {Z.shape[1]}")
    return ad.affine(ad.leaky_relu(ad.affine(Z, w1, b1)), w2, b2)


def nc_predict(Z: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> np.ndarray:
    """Class probabilities, one row per node."""
    return ad.softmax_rows(nc_logits(Z, w1, b1, w2, b2)).data


def nc_loss(logits: Tensor, labels, mask) -> Tensor:
    """Mean cross-entropy over the masked nodes, computed from logits."""
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("empty mask")
    labels = np.asarray(labels)
    return ad.cross_entropy_with_logits(ad.gather_rows(logits, idx), labels[idx])


def lp_logits(Z: Tensor, pairs) -> Tensor:
    """Inner products z_u . z_w for each (u, w) row of ``pairs`` as an m x 1 column."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return ad.row_sum(ad.mul(ad.gather_rows(Z, pairs[:, 0]), ad.gather_rows(Z, pairs[:, 1])))


def lp_loss_from_logits(pos: Tensor, neg: Tensor) -> Tensor:
    """Mean binary cross-entropy, positives labelled 1 and negatives 0.

    A logit s is written as the two-class row [0, s], whose softmax
    cross-entropy equals the sigmoid BCE of s.
    """
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("lp loss needs non-empty positive and negative batches")
    logits = ad.concat_cols(Tensor(np.zeros((pos.shape[0] + neg.shape[0], 1), dtype=pos.data.dtype)),
                            _stack_rows(pos, neg))
    labels = np.concatenate([np.ones(pos.shape[0], np.int64), np.zeros(neg.shape[0], np.int64)])
    return ad.cross_entropy_with_logits(logits, labels)


def _stack_rows(a: Tensor, b: Tensor) -> Tensor:
    return ad.transpose(ad.concat_cols(ad.transpose(a), ad.transpose(b)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lp_score(z_u, z_w) -> float:
    z_u, z_w = np.asarray(z_u, dtype=float), np.asarray(z_w, dtype=float)
    if z_u.shape != z_w.shape:
        raise ValueError("embeddings differ in length")
    return float(sigmoid(z_u @ z_w))


def lp_loss(pos_probs, neg_probs) -> float:
    """Mean BCE from probabilities (reporting helper; training uses logits)."""
    pos, neg = np.asarray(pos_probs, dtype=float), np.asarray(neg_probs, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("empty batch")
    terms = np.concatenate([-np.log(pos), -np.log1p(-neg)])
    return float(terms.mean())
