"""Backbone MLP plus the basic/empirical parameter pair.

Parameters live in flat fp64 vectors so the EMA update and the optimizer
are single vectorized statements; forward passes bind reshaped views of
the flat vector as engine tensors.  The basic vector is the one gradient
descent touches.  The empirical vector is only ever written by
ema_update and is what evaluation reports first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "frematch-checkpoint-v1"


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: tuple
    feature_dim: int
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.feature_dim < 2:
            raise ValueError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")


def param_layout(spec: NetSpec) -> list:
    """(name, shape, offset) for every weight block, trunk then head."""
    dims = [spec.input_dim, *spec.hidden_dims, spec.feature_dim]
    entries = []
    offset = 0
    for i in range(len(dims) - 1):
        for name, shape in ((f"w{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))):
            entries.append((name, shape, offset))
            offset += int(np.prod(shape))
    for name, shape in (("head_w", (spec.feature_dim, spec.num_classes)),
                        ("head_b", (spec.num_classes,))):
        entries.append((name, shape, offset))
        offset += int(np.prod(shape))
    return entries


def param_count(spec: NetSpec) -> int:
    name, shape, offset = param_layout(spec)[-1]
    return offset + int(np.prod(shape))


def init_params(spec: NetSpec, seed: int) -> np.ndarray:
    """Scaled-uniform init: every block of a layer drawn from
    U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    flat = np.empty(param_count(spec), dtype=np.float64)
    for name, shape, offset in param_layout(spec):
        size = int(np.prod(shape))
        fan_in = shape[0] if len(shape) == 2 else _fan_in_for_bias(spec, name)
        bound = 1.0 / np.sqrt(fan_in)
        flat[offset:offset + size] = rng.uniform(-bound, bound, size)
    return flat


def _fan_in_for_bias(spec: NetSpec, name: str) -> int:
    dims = [spec.input_dim, *spec.hidden_dims, spec.feature_dim]
    if name == "head_b":
        return spec.feature_dim
    return dims[int(name[1:])]


@dataclass
class DualModel:
    spec: NetSpec
    basic: np.ndarray      # trained by gradient descent
    empirical: np.ndarray  # written only by ema_update


def init_pair(spec: NetSpec, seed: int) -> DualModel:
    basic = init_params(spec, seed)
    return DualModel(spec=spec, basic=basic, empirical=basic.copy())


def bind_params(flat: np.ndarray, spec: NetSpec, requires_grad: bool) -> list:
    """Engine tensors viewing the flat vector, in layout order."""
    if flat.shape != (param_count(spec),):
        raise ValueError(f"parameter vector has shape {flat.shape}, "
                         f"layout wants ({param_count(spec)},)")
    bound = []
    for name, shape, offset in param_layout(spec):
        size = int(np.prod(shape))
        view = flat[offset:offset + size].reshape(shape)
        bound.append(ad.Tensor(view, requires_grad=requires_grad))
    return bound


def forward_features(params: Sequence[ad.Tensor], x: ad.Tensor) -> ad.Tensor:
    """Trunk pass: relu after every hidden layer, linear feature output."""
    trunk = params[:-2]
    h = x
    for i in range(0, len(trunk), 2):
        h = ad.add(ad.matmul(h, trunk[i]), trunk[i + 1])
        if i + 2 < len(trunk):
            h = ad.relu(h)
    return h


def forward_logits(params: Sequence[ad.Tensor], feats: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(feats, params[-2]), params[-1])


def gather_grads(params: Sequence[ad.Tensor], spec: NetSpec) -> np.ndarray:
    """Flatten per-block grads back into layout order, zeros where a
    block received none."""
    flat = np.zeros(param_count(spec), dtype=np.float64)
    for t, (name, shape, offset) in zip(params, param_layout(spec)):
        if t.grad is not None:
            flat[offset:offset + int(np.prod(shape))] = t.grad.reshape(-1)
    return flat


def ema_update(dual: DualModel, m: float) -> None:
    """empirical <- m * empirical + (1 - m) * basic, in place."""
    if not (0.0 <= m < 1.0):
        raise ValueError(f"ema momentum must be in [0, 1), got {m}")
    dual.empirical *= m
    dual.empirical += (1.0 - m) * dual.basic


def momentum_schedule(iteration: int, m0: float) -> float:
    """Warm-up ramp min(1 - 1/(iteration + 1), m0); starts at 0 and
    saturates at the ceiling m0."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if not (0.0 <= m0 < 1.0):
        raise ValueError(f"m0 must be in [0, 1), got {m0}")
    return min(1.0 - 1.0 / (iteration + 1.0), m0)


# ---------------------------------------------------------------------------
# checkpoint file: one JSON header line, then little-endian fp64 blocks


def save_checkpoint(path, dual: DualModel,
                    mapping: Optional[np.ndarray] = None,
                    eps_logits: Optional[np.ndarray] = None) -> None:
    blocks = [("basic", dual.basic), ("empirical", dual.empirical)]
    if mapping is not None:
        blocks.append(("fsr_mapping", np.asarray(mapping, dtype=np.float64)))
    if eps_logits is not None:
        blocks.append(("fsr_eps_logits", np.asarray(eps_logits, dtype=np.float64)))
    header = {
        "format": CHECKPOINT_FORMAT,
        "net": {
            "input_dim": dual.spec.input_dim,
            "hidden_dims": list(dual.spec.hidden_dims),
            "feature_dim": dual.spec.feature_dim,
            "num_classes": dual.spec.num_classes,
        },
        "layout": [[name, list(shape), offset] for name, shape, offset in param_layout(dual.spec)],
        "blocks": [[name, arr.size] for name, arr in blocks],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in blocks:
            fh.write(arr.astype("<f8").tobytes())


@dataclass
class Checkpoint:
    dual: DualModel
    mapping: Optional[np.ndarray]
    eps_logits: Optional[np.ndarray]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {header.get('format')!r}")
    spec = NetSpec(input_dim=header["net"]["input_dim"],
                   hidden_dims=tuple(header["net"]["hidden_dims"]),
                   feature_dim=header["net"]["feature_dim"],
                   num_classes=header["net"]["num_classes"])
    expected = sum(size for _, size in header["blocks"]) * 8
    if len(payload) != expected:
        raise ValueError(f"checkpoint payload is {len(payload)} bytes, "
                         f"header promises {expected}")
    parts = {}
    cursor = 0
    for name, size in header["blocks"]:
        parts[name] = np.frombuffer(payload, dtype="<f8", count=size,
                                    offset=cursor).astype(np.float64)
        cursor += size * 8
    for required in ("basic", "empirical"):
        if required not in parts or parts[required].size != param_count(spec):
            raise ValueError(f"checkpoint block {required!r} missing or sized wrong")
    dual = DualModel(spec=spec, basic=parts["basic"].copy(),
                     empirical=parts["empirical"].copy())
    mapping = parts.get("fsr_mapping")
    if mapping is not None:
        d = spec.feature_dim
        if mapping.size != d * d:
            raise ValueError(f"checkpoint block 'fsr_mapping' has {mapping.size} "
                             f"entries, expected {d * d}")
        mapping = mapping.reshape(d, d)
    return Checkpoint(dual=dual, mapping=mapping,
                      eps_logits=parts.get("fsr_eps_logits"))
