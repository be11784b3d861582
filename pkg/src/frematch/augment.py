"""Weak and strong augmentation pipelines for images and point clouds.

Weak keeps the sample recognizable: horizontal flip plus a small integer
translation for images, low-sigma Gaussian jitter for points.  Strong
starts from the weak ops and piles on: a fixed number of draws from
{rotate +-30 degrees, invert, contrast, brightness} followed by one
square cutout for images, higher-sigma jitter plus an occasional
coordinate drop for points.  Every random decision comes from the
caller's generator in a fixed order, so a reseeded generator replays
the exact same outputs.  Image outputs are clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugPolicy:
    kind: str                        # "weak" or "strong"
    modality: str                    # "image" or "point"
    weak_jitter_sigma: float = 0.05
    strong_jitter_sigma: float = 0.20
    translate_frac: float = 0.125
    cutout_frac: float = 0.25
    strong_ops_per_sample: int = 2

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"kind must be weak or strong, got {self.kind!r}")
        if self.modality not in ("image", "point"):
            raise ValueError(f"modality must be image or point, got {self.modality!r}")
        if self.weak_jitter_sigma < 0.0 or self.strong_jitter_sigma < 0.0:
            raise ValueError("jitter sigmas must be >= 0")
        if not (0.0 <= self.translate_frac <= 0.5):
            raise ValueError(f"translate_frac must be in [0, 0.5], got {self.translate_frac}")
        if not (0.0 <= self.cutout_frac <= 0.5):
            raise ValueError(f"cutout_frac must be in [0, 0.5], got {self.cutout_frac}")
        if self.strong_ops_per_sample < 0:
            raise ValueError("strong_ops_per_sample must be >= 0")
        if self.modality == "point" and self.strong_jitter_sigma <= self.weak_jitter_sigma:
            raise ValueError("point policies need strong_jitter_sigma > weak_jitter_sigma")


def make_policies(modality: str, weak_jitter_sigma=0.05, strong_jitter_sigma=0.20,
                  translate_frac=0.125, cutout_frac=0.25, strong_ops_per_sample=2):
    """The (weak, strong) pair a trainer wants, sharing every knob."""
    common = dict(modality=modality, weak_jitter_sigma=weak_jitter_sigma,
                  strong_jitter_sigma=strong_jitter_sigma, translate_frac=translate_frac,
                  cutout_frac=cutout_frac, strong_ops_per_sample=strong_ops_per_sample)
    return AugPolicy(kind="weak", **common), AugPolicy(kind="strong", **common)


def _check_sample(x: np.ndarray, policy: AugPolicy) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = 2 if policy.modality == "image" else 1
    if x.ndim != want:
        raise ValueError(f"{policy.modality} policy expects {want}-d samples, "
                         f"got shape {x.shape}")
    return x


def _flip_translate(x, policy, rng):
    # flip decision is always drawn, applied only half the time
    if rng.random() < 0.5:
        x = x[:, ::-1]
    k = int(policy.translate_frac * x.shape[0])
    dy, dx = (int(v) for v in rng.integers(-k, k + 1, size=2))
    out = np.zeros_like(x)
    h, w = x.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = x[ys_src, xs_src]
    return out


def _strong_image_op(x, rng):
    choice = int(rng.integers(0, 4))
    if choice == 0:
        angle = 30.0 if rng.random() < 0.5 else -30.0
        return ndimage.rotate(x, angle, reshape=False, order=1,
                              mode="constant", cval=0.0)
    if choice == 1:
        return 1.0 - x
    if choice == 2:
        scale = rng.uniform(0.5, 1.5)
        return 0.5 + scale * (x - 0.5)
    shift = rng.uniform(-0.3, 0.3)
    return x + shift


def _cutout(x, policy, rng):
    side = int(policy.cutout_frac * x.shape[0])
    if side < 1:
        return x
    h, w = x.shape
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = x.copy()
    out[top:top + side, left:left + side] = 0.0
    return out


def weak_augment(x: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    if policy.kind != "weak":
        raise ValueError(f"weak_augment got a {policy.kind!r} policy")
    x = _check_sample(x, policy)
    if policy.modality == "point":
        return x + policy.weak_jitter_sigma * rng.standard_normal(x.shape)
    return np.clip(_flip_translate(x, policy, rng), 0.0, 1.0)


def strong_augment(x: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    if policy.kind != "strong":
        raise ValueError(f"strong_augment got a {policy.kind!r} policy")
    x = _check_sample(x, policy)
    if policy.modality == "point":
        out = x + policy.strong_jitter_sigma * rng.standard_normal(x.shape)
        if rng.random() < 0.25:
            out = out.copy()
            out[int(rng.integers(0, out.shape[0]))] = 0.0
        return out
    out = _flip_translate(x, policy, rng)
    for _ in range(policy.strong_ops_per_sample):
        out = _strong_image_op(out, rng)
    out = _cutout(out, policy, rng)
    return np.clip(out, 0.0, 1.0)


def augment_batch(batch: np.ndarray, policy: AugPolicy,
                  rng: np.random.Generator) -> np.ndarray:
    """Apply the policy sample by sample, consuming the generator in
    batch order."""
    apply = weak_augment if policy.kind == "weak" else strong_augment
    return np.stack([apply(sample, policy, rng) for sample in np.asarray(batch)])
