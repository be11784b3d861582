"""Training loop for the dual-model method and its ablations.

One iteration, in order: forward the weakly augmented labelled batch
through the basic model for the supervised loss; fold the basic weights
into the empirical model (EMA, before any unlabelled work so the
pseudo-labeller sees the freshest average); weakly augment the
unlabelled batch for the empirical model's features and pseudo-labels;
strongly augment the same samples for the basic model; centralize both
feature blocks and score the renormalization and pseudo-label losses;
combine, run one backward pass, and step every trainable block (network
weights, mapping C, relaxation logits rho) with the shared schedule.

Modes drop terms, never reorder them.  fsr_only drops the pseudo-label
loss, pl_only drops the renormalization loss, supervised skips the
unlabelled pipeline entirely, fully_supervised trains on the whole
training pool with labels revealed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import data as dat
from . import fsr
from . import nets
from . import pseudolabel as pl

MODES = ("frematch", "fsr_only", "pl_only", "supervised", "fully_supervised")
METRICS_HEADER = "epoch,iter,l_sup,l_fre,l_pl,total,mask_rate,lr,err_basic,err_emp"


class TrainAbort(RuntimeError):
    """Raised when training hits non-finite numbers; carries the blame."""

    def __init__(self, message, block=None, epoch=None, iteration=None):
        super().__init__(message)
        self.block = block
        self.epoch = epoch
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "frematch"
    lam: float = 20.0
    eta: float = 0.95
    beta: float = 1.0
    m: float = 0.9
    m0: float = 0.97
    ema_scheduled: bool = False
    hidden_dims: tuple = (64, 64)
    feature_dim: int = 16
    lr0: float = 0.01
    min_lr: float = 1e-4
    weight_decay: float = 1e-3
    sgd_momentum: float = 0.9
    nesterov: bool = False
    optimizer: str = "sgd"
    epochs: int = 30
    labelled_bs: int = 8
    mu: float = 1.0
    seed: int = 0
    weak_jitter_sigma: float = 0.05
    strong_jitter_sigma: float = 0.20
    translate_frac: float = 0.125
    cutout_frac: float = 0.25
    strong_ops_per_sample: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not (0.0 <= self.m < 1.0):
            raise ValueError(f"m must be in [0, 1), got {self.m}")
        if not (0.0 <= self.m0 < 1.0):
            raise ValueError(f"m0 must be in [0, 1), got {self.m0}")
        if self.lr0 <= 0.0 or self.min_lr < 0.0 or self.min_lr > self.lr0:
            raise ValueError(f"need lr0 > 0 and 0 <= min_lr <= lr0, "
                             f"got lr0={self.lr0}, min_lr={self.min_lr}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0.0 <= self.sgd_momentum < 1.0):
            raise ValueError(f"sgd_momentum must be in [0, 1), got {self.sgd_momentum}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.labelled_bs < 1:
            raise ValueError(f"labelled_bs must be >= 1, got {self.labelled_bs}")
        if self.mu < 1.0:
            raise ValueError(f"mu must be >= 1, got {self.mu}")
        if self.feature_dim < 2:
            raise ValueError(f"feature_dim must be >= 2, got {self.feature_dim}")


@dataclass
class IterRecord:
    epoch: int
    iteration: int
    l_sup: float
    l_fre: float
    l_pl: float
    total: float
    mask_rate: float
    lr: float


@dataclass
class EpochRecord:
    epoch: int
    iteration: int
    l_sup: float
    l_fre: float
    l_pl: float
    total: float
    mask_rate: float
    lr: float
    err_basic: float
    err_emp: float

    def csv_row(self) -> str:
        nums = [self.l_sup, self.l_fre, self.l_pl, self.total,
                self.mask_rate, self.lr, self.err_basic, self.err_emp]
        return ",".join([str(self.epoch), str(self.iteration),
                         *(f"{v:.9g}" for v in nums)])


@dataclass
class RunLog:
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def csv_text(self) -> str:
        return "\n".join([METRICS_HEADER, *(r.csv_row() for r in self.epochs)]) + "\n"


@dataclass
class TrainState:
    cfg: TrainConfig
    dual: nets.DualModel
    fsr: fsr.FsrParams
    vel: dict
    total_iters: int
    aug_rng: np.random.Generator
    weak_policy: aug.AugPolicy
    strong_policy: aug.AugPolicy
    t: int = 0
    adam_m: Optional[dict] = None
    adam_v: Optional[dict] = None


def cosine_lr(t: int, total: int, lr0: float, min_lr: float) -> float:
    """Half-cosine decay from lr0 at t=0 to min_lr at t=total; anything
    past the horizon stays clamped at min_lr."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t > total:
        return min_lr
    return min_lr + 0.5 * (lr0 - min_lr) * (1.0 + math.cos(math.pi * t / total))


def init_state(cfg: TrainConfig, input_dim: int, num_classes: int,
               total_iters: int, modality: str) -> TrainState:
    spec = nets.NetSpec(input_dim=input_dim, hidden_dims=cfg.hidden_dims,
                        feature_dim=cfg.feature_dim, num_classes=num_classes)
    dual = nets.init_pair(spec, cfg.seed)
    fsr_params = fsr.FsrParams.init(cfg.feature_dim)
    vel = {"theta": np.zeros_like(dual.basic),
           "mapping": np.zeros_like(fsr_params.mapping.data),
           "eps_logits": np.zeros_like(fsr_params.eps_logits.data)}
    weak, strong = aug.make_policies(
        modality, weak_jitter_sigma=cfg.weak_jitter_sigma,
        strong_jitter_sigma=cfg.strong_jitter_sigma,
        translate_frac=cfg.translate_frac, cutout_frac=cfg.cutout_frac,
        strong_ops_per_sample=cfg.strong_ops_per_sample)
    return TrainState(cfg=cfg, dual=dual, fsr=fsr_params, vel=vel,
                      total_iters=max(total_iters, 1),
                      aug_rng=np.random.default_rng([cfg.seed, 101]),
                      weak_policy=weak, strong_policy=strong)


def _params_of(state: TrainState) -> dict:
    return {"theta": state.dual.basic,
            "mapping": state.fsr.mapping.data,
            "eps_logits": state.fsr.eps_logits.data}


def sgd_step(state: TrainState, grads: dict, lr: float, cfg: TrainConfig) -> None:
    """Momentum SGD over every trainable block.  Weight decay touches
    the network weights only, never C or rho, and never the empirical
    vector (which no optimizer ever sees)."""
    params = _params_of(state)
    for block, p in params.items():
        g = grads[block]
        if not np.all(np.isfinite(g)):
            raise TrainAbort(f"non-finite gradient in block {block!r}", block=block)
        if block == "theta" and cfg.weight_decay > 0.0:
            g = g + cfg.weight_decay * p
        v = state.vel[block]
        v *= cfg.sgd_momentum
        v += g
        step = g + cfg.sgd_momentum * v if cfg.nesterov else v
        p -= lr * step


def adam_step(state: TrainState, grads: dict, lr: float, cfg: TrainConfig,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    # kept only to reproduce how badly this method pairs with Adam
    params = _params_of(state)
    if state.adam_m is None:
        state.adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        state.adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    step_num = state.t + 1
    for block, p in params.items():
        g = grads[block]
        if not np.all(np.isfinite(g)):
            raise TrainAbort(f"non-finite gradient in block {block!r}", block=block)
        if block == "theta" and cfg.weight_decay > 0.0:
            g = g + cfg.weight_decay * p
        m = state.adam_m[block]
        v = state.adam_v[block]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step_num)
        v_hat = v / (1.0 - beta2 ** step_num)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _flatten(batch: np.ndarray) -> np.ndarray:
    return batch.reshape(batch.shape[0], -1)


_ZERO = ad.Tensor(0.0)


def train_iteration(state: TrainState, labelled: dat.LabelledBatch,
                    unlabelled: Optional[dat.UnlabelledBatch],
                    cfg: TrainConfig, epoch: int = 0) -> IterRecord:
    lr = cosine_lr(state.t, state.total_iters, cfg.lr0, cfg.min_lr)
    uses_unlabelled = cfg.mode in ("frematch", "fsr_only", "pl_only")
    if uses_unlabelled and unlabelled is None:
        raise ValueError(f"mode {cfg.mode!r} needs an unlabelled batch")

    # (1) supervised forward on the weakly augmented labelled batch
    xw = aug.augment_batch(labelled.x, state.weak_policy, state.aug_rng)
    basic_params = nets.bind_params(state.dual.basic, state.dual.spec,
                                    requires_grad=True)
    feats_l = nets.forward_features(basic_params, ad.Tensor(_flatten(xw)))
    logits_l = nets.forward_logits(basic_params, feats_l)
    loss_fn = pl.full_sup_loss if cfg.mode == "fully_supervised" else pl.sup_loss
    l_sup = loss_fn(logits_l, labelled.y)

    # (2) empirical model absorbs the current basic weights
    m = nets.momentum_schedule(state.t, cfg.m0) if cfg.ema_scheduled else cfg.m
    nets.ema_update(state.dual, m)

    # (3) unlabelled pipeline: weak view through the empirical model,
    # strong view through the basic model
    l_fre = l_pl = _ZERO
    mask_rate = 0.0
    if uses_unlabelled:
        uw = aug.augment_batch(unlabelled.x, state.weak_policy, state.aug_rng)
        emp_params = nets.bind_params(state.dual.empirical, state.dual.spec,
                                      requires_grad=False)
        feats_emp = nets.forward_features(emp_params, ad.Tensor(_flatten(uw)))
        logits_emp = nets.forward_logits(emp_params, feats_emp)
        pb = pl.make_pseudo_labels(logits_emp, cfg.eta)
        mask_rate = pb.mask_rate

        us = aug.augment_batch(unlabelled.x, state.strong_policy, state.aug_rng)
        feats_b = nets.forward_features(basic_params, ad.Tensor(_flatten(us)))
        logits_b = nets.forward_logits(basic_params, feats_b)

        # (4) centralized feature blocks and the two unsupervised terms
        if cfg.mode in ("frematch", "fsr_only"):
            pair = fsr.FeaturePair(basic=fsr.centralize(feats_b),
                                   empirical=fsr.centralize(feats_emp))
            l_fre = fsr.fsr_loss(pair, state.fsr, cfg.beta)
        if cfg.mode in ("frematch", "pl_only"):
            l_pl = pl.pl_loss(pb, logits_b)

    # (5) one combined backward pass, one optimizer step
    total = pl.total_loss(l_sup, l_fre, l_pl, cfg.lam)
    if not np.isfinite(total.data):
        raise TrainAbort("non-finite loss", block="loss")
    ad.backward(total)

    grads = {"theta": nets.gather_grads(basic_params, state.dual.spec),
             "mapping": (state.fsr.mapping.grad if state.fsr.mapping.grad is not None
                         else np.zeros_like(state.fsr.mapping.data)),
             "eps_logits": (state.fsr.eps_logits.grad
                            if state.fsr.eps_logits.grad is not None
                            else np.zeros_like(state.fsr.eps_logits.data))}
    state.fsr.mapping.grad = None
    state.fsr.eps_logits.grad = None

    if cfg.optimizer == "adam":
        adam_step(state, grads, lr, cfg)
    else:
        sgd_step(state, grads, lr, cfg)

    record = IterRecord(epoch=epoch, iteration=state.t, l_sup=l_sup.item(),
                        l_fre=l_fre.item(), l_pl=l_pl.item(), total=total.item(),
                        mask_rate=mask_rate, lr=lr)
    state.t += 1
    return record


def evaluate(flat_params: np.ndarray, spec: nets.NetSpec, samples: np.ndarray,
             labels: np.ndarray) -> float:
    """Plain test error: no augmentation, argmax prediction."""
    if samples.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    params = nets.bind_params(flat_params, spec, requires_grad=False)
    logits = nets.forward_logits(params, nets.forward_features(
        params, ad.Tensor(_flatten(samples))))
    preds = ad.argmax(logits)
    return float(np.mean(preds != labels))


def run(cfg: TrainConfig, ds: dat.Dataset, split: dat.SslSplit,
        out_dir=None) -> RunLog:
    """Full training run.  Writes metrics.csv (incrementally, so aborts
    keep partial rows) and checkpoint.bin under out_dir when given."""
    modality = "image" if ds.samples.ndim == 3 else "point"
    if cfg.mode == "fully_supervised":
        pool = np.concatenate([split.labelled_idx, split.unlabelled_idx])
        per_epoch = math.ceil(pool.size / cfg.labelled_bs)
    else:
        pool = None
        per_epoch = dat.epoch_length(split.unlabelled_idx.size, cfg.labelled_bs,
                                     cfg.mu)
    total_iters = cfg.epochs * per_epoch
    state = init_state(cfg, ds.input_dim, ds.num_classes, total_iters, modality)

    test_x = ds.samples[split.test_idx]
    test_y = ds.labels[split.test_idx]
    log = RunLog()
    csv_fh = None
    if out_dir is not None:
        csv_fh = open(f"{out_dir}/metrics.csv", "w", encoding="utf-8")
        csv_fh.write(METRICS_HEADER + "\n")
        csv_fh.flush()

    def emit(row: EpochRecord):
        log.epochs.append(row)
        if csv_fh is not None:
            csv_fh.write(row.csv_row() + "\n")
            csv_fh.flush()

    def eval_pair():
        return (evaluate(state.dual.basic, state.dual.spec, test_x, test_y),
                evaluate(state.dual.empirical, state.dual.spec, test_x, test_y))

    try:
        err_basic, err_emp = eval_pair()
        emit(EpochRecord(epoch=0, iteration=0, l_sup=0.0, l_fre=0.0, l_pl=0.0,
                         total=0.0, mask_rate=0.0, lr=cfg.lr0,
                         err_basic=err_basic, err_emp=err_emp))
        for epoch in range(1, cfg.epochs + 1):
            if cfg.mode == "fully_supervised":
                batches = ((lb, None) for lb in dat.iterate_labelled(
                    ds, pool, cfg.labelled_bs, cfg.seed, epoch))
            else:
                batches = dat.batcher(ds, split, cfg.labelled_bs, cfg.mu,
                                      cfg.seed, epoch)
            epoch_records = []
            for labelled, unlabelled in batches:
                try:
                    rec = train_iteration(state, labelled, unlabelled, cfg,
                                          epoch=epoch)
                except TrainAbort as abort:
                    raise TrainAbort(
                        f"aborted at epoch {epoch} iteration {state.t}: {abort}",
                        block=abort.block, epoch=epoch, iteration=state.t,
                    ) from abort
                epoch_records.append(rec)
                log.iterations.append(rec)
            err_basic, err_emp = eval_pair()
            emit(EpochRecord(
                epoch=epoch, iteration=state.t,
                l_sup=float(np.mean([r.l_sup for r in epoch_records])),
                l_fre=float(np.mean([r.l_fre for r in epoch_records])),
                l_pl=float(np.mean([r.l_pl for r in epoch_records])),
                total=float(np.mean([r.total for r in epoch_records])),
                mask_rate=float(np.mean([r.mask_rate for r in epoch_records])),
                lr=epoch_records[-1].lr,
                err_basic=err_basic, err_emp=err_emp))
    finally:
        if csv_fh is not None:
            csv_fh.close()

    if out_dir is not None:
        nets.save_checkpoint(f"{out_dir}/checkpoint.bin", state.dual,
                             mapping=state.fsr.mapping.data,
                             eps_logits=state.fsr.eps_logits.data)
    return log
