"""Feature space renormalization: the learnable mapping between the two
models' centralized feature blocks, and the oracles that pin down why
centralized covariance is the right object to align.

The regularizer has two parts.  The residual term asks the mapping C to
carry the basic model's centralized features U onto the empirical
model's U' (as transposed column blocks, U'^T - C U^T).  The relaxation
term asks C^T C to be diagonal with entries eps in [0, 1], each eps_j
parameterized as sigmoid(rho_j) so the box constraint holds by
construction.  Both parts are measured with l_m, the mean of squared
matrix entries.  Gradients reach C, rho and the basic features only;
the empirical block enters detached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class FsrParams:
    """Learnable mapping C (d x d) and relaxation logits rho (d,)."""
    mapping: ad.Tensor
    eps_logits: ad.Tensor

    @classmethod
    def init(cls, d: int, eps_logit: float = 4.0) -> "FsrParams":
        # identity mapping; sigmoid(4) ~ 0.982 starts eps near its ceiling
        return cls(mapping=ad.Tensor(np.eye(d), requires_grad=True),
                   eps_logits=ad.Tensor(np.full(d, float(eps_logit)), requires_grad=True))

    @property
    def d(self) -> int:
        return self.mapping.data.shape[0]

    def eps(self) -> ad.Tensor:
        return ad.sigmoid(self.eps_logits)


@dataclass
class FeaturePair:
    """Centralized feature blocks for one unlabelled batch: basic-model
    features carry gradient, empirical-model features are detached."""
    basic: ad.Tensor
    empirical: ad.Tensor

    def __post_init__(self):
        if self.basic.data.shape != self.empirical.data.shape:
            raise ad.ShapeError(f"feature blocks disagree: {self.basic.data.shape} "
                                f"vs {self.empirical.data.shape}")
        if self.empirical.requires_grad:
            raise ValueError("empirical feature block must be detached")


def centralize(x: ad.Tensor) -> ad.Tensor:
    """Subtract the per-column mean, so each feature coordinate is
    zero-mean over the batch."""
    return ad.sub(x, ad.mean(x, axis=0))


def covariance(x: ad.Tensor) -> ad.Tensor:
    """X^T X of an already-centralized block.  Symmetric positive
    semidefinite by construction, no 1/n normalization."""
    return ad.matmul(ad.transpose(x), x)


def fsr_loss(pair: FeaturePair, params: FsrParams, beta: float,
             eps: ad.Tensor = None) -> ad.Tensor:
    """l_m(U'^T - C U^T) + beta * l_m(C^T C - diag(eps)).

    eps defaults to sigmoid(rho); tests may inject a fixed eps tensor
    (for example all ones) to hit the exact-orthogonal zero case.
    """
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    d = params.d
    if pair.basic.data.shape[1] != d:
        raise ad.ShapeError(f"feature dim {pair.basic.data.shape[1]} does not "
                            f"match mapping dim {d}")
    if eps is None:
        eps = params.eps()

    residual = ad.sub(ad.transpose(pair.empirical),
                      ad.matmul(params.mapping, ad.transpose(pair.basic)))
    relax = ad.sub(ad.matmul(ad.transpose(params.mapping), params.mapping),
                   ad.diag(eps))
    return ad.add(ad.mean_of_squares(residual),
                  ad.scalar_mul(ad.mean_of_squares(relax), beta))


# ---------------------------------------------------------------------------
# oracles: executable statements of the invariances the penalty relies on


def trace_conjugation_oracle(sigma: np.ndarray, p: np.ndarray):
    """Conjugating a covariance by any invertible P preserves the trace:
    tr(P^-1 sigma P) = tr(sigma).  Returns both traces.

    P is rejected as near-singular when |det P| <= 1e-8 (checked on the
    LU factors that also back the solve).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if sigma.shape != p.shape or sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ad.ShapeError(f"square matrices of equal size required, "
                            f"got {sigma.shape} and {p.shape}")
    sign, logdet = np.linalg.slogdet(p)
    if sign == 0.0 or np.exp(logdet) <= 1e-8:
        raise ValueError(f"P is near-singular (|det| <= 1e-8)")
    conjugated = np.linalg.solve(p, sigma @ p)
    return float(np.trace(conjugated)), float(np.trace(sigma))


@dataclass
class InvarianceReport:
    translation_dev: float   # max |cov(X + 1 t^T) - cov(X)| after centralizing
    rotation_rel_dev: float  # relative trace deviation under rotation
    passed: bool


def covariance_invariance_oracle(x: np.ndarray, t: np.ndarray,
                                 r: np.ndarray) -> InvarianceReport:
    """Centralized covariance kills translations entirely, and rotations
    leave its trace alone.  R must be orthogonal within 1e-10."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    d = x.shape[1]
    if np.max(np.abs(r.T @ r - np.eye(d))) > 1e-10:
        raise ValueError("R is not orthogonal within 1e-10")

    def centered_cov(block):
        c = block - block.mean(axis=0)
        return c.T @ c

    base = centered_cov(x)
    shifted = centered_cov(x + np.outer(np.ones(x.shape[0]), t))
    rotated = centered_cov(x @ r)

    translation_dev = float(np.max(np.abs(shifted - base)))
    base_trace = float(np.trace(base))
    rotation_rel_dev = abs(float(np.trace(rotated)) - base_trace) / max(abs(base_trace), 1e-30)
    return InvarianceReport(
        translation_dev=translation_dev,
        rotation_rel_dev=rotation_rel_dev,
        passed=(translation_dev <= 1e-10 and rotation_rel_dev <= 1e-9),
    )
