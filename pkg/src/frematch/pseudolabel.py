"""Confidence-gated pseudo-labels and the cross-entropy losses.

The empirical model's softmax over a weakly augmented batch proposes a
hard label per sample; only rows whose peak probability strictly
exceeds the threshold eta contribute.  The gate and the proposals are
detached, so no gradient ever reaches the empirical model from here.
All cross-entropies are computed in log space from logits and averaged
over the full batch size, masked rows included as zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class PseudoBatch:
    q: np.ndarray      # soft predictions, rows sum to 1, detached
    q_hat: np.ndarray  # row argmax, lowest index on ties
    mask: np.ndarray   # max(q) > eta, strict

    @property
    def mask_rate(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def make_pseudo_labels(logits_emp: ad.Tensor, eta: float) -> PseudoBatch:
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    z = logits_emp.data
    if z.ndim != 2:
        raise ad.ShapeError(f"logits must be 2-d, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    q = e / e.sum(axis=1, keepdims=True)
    return PseudoBatch(q=q, q_hat=np.argmax(q, axis=1), mask=q.max(axis=1) > eta)


def _nll_from_onehot(logits: ad.Tensor, weights: np.ndarray) -> ad.Tensor:
    """-(1/n) sum of weighted log softmax entries; weights select (and
    gate) one class per row."""
    n = logits.data.shape[0]
    picked = ad.mul(ad.log_softmax(logits), ad.Tensor(weights))
    return ad.scalar_mul(ad.sum_all(picked), -1.0 / n)


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes}): "
                         f"min {labels.min()}, max {labels.max()}")
    return labels


def pl_loss(pb: PseudoBatch, logits_basic: ad.Tensor) -> ad.Tensor:
    """Masked cross-entropy of the basic model against the hard
    proposals, divided by the full batch size n."""
    n, c = logits_basic.data.shape
    if pb.q_hat.shape != (n,):
        raise ad.ShapeError(f"pseudo-label count {pb.q_hat.shape} does not "
                            f"match logits rows {n}")
    _check_labels(pb.q_hat, c)
    weights = np.zeros((n, c))
    weights[np.arange(n), pb.q_hat] = pb.mask.astype(np.float64)
    return _nll_from_onehot(logits_basic, weights)


def sup_loss(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean cross-entropy on labelled samples."""
    n, c = logits.data.shape
    labels = _check_labels(labels, c)
    if labels.shape != (n,):
        raise ad.ShapeError(f"label count {labels.shape} does not match "
                            f"logits rows {n}")
    weights = np.zeros((n, c))
    weights[np.arange(n), labels] = 1.0
    return _nll_from_onehot(logits, weights)


def full_sup_loss(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Same estimator as sup_loss, applied to the whole labelled pool in
    the fully supervised baseline."""
    return sup_loss(logits, labels)


def total_loss(l_sup: ad.Tensor, l_fre: ad.Tensor, l_pl: ad.Tensor,
               lam: float) -> ad.Tensor:
    """L = l_sup + lam * (l_fre + l_pl), lam fixed for the whole run."""
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return ad.add(l_sup, ad.scalar_mul(ad.add(l_fre, l_pl), lam))
