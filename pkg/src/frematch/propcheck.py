"""Self-contained property suite runnable from the command line.

Each property is an executable statement of something the rest of the
package relies on: gradient rules agree with finite differences, the
trace really is conjugation-invariant, centralized covariance really
does kill translations, the EMA recurrence has its closed form, and the
losses vanish exactly where they should.  Failures are report entries,
never exceptions, so a broken build still produces a readable list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fsr
from . import nets
from . import pseudolabel as pl


@dataclass
class PropResult:
    name: str
    passed: bool
    detail: str = ""


def _tiny_net():
    return nets.NetSpec(input_dim=3, hidden_dims=(5,), feature_dim=4,
                        num_classes=3)


def _primitive_cases(rng):
    """(name, loss_fn, inputs) triples covering every gradient rule."""

    def t(shape, positive=False, off_kink=False):
        x = rng.standard_normal(shape)
        if positive:
            x = np.abs(x) + 0.5
        if off_kink:
            # keep relu inputs away from 0 so finite differences behave
            x = x + 0.1 * np.sign(x)
        return ad.Tensor(x, requires_grad=True)

    def scalarize(y):
        return y if y.data.ndim == 0 else ad.mean_of_squares(y)

    return [
        ("add", lambda a, b: scalarize(ad.add(a, b)), [t((3, 4)), t((3, 4))]),
        ("add-rowvec", lambda a, b: scalarize(ad.add(a, b)), [t((3, 4)), t((4,))]),
        ("sub", lambda a, b: scalarize(ad.sub(a, b)), [t((3, 4)), t((3, 4))]),
        ("mul", lambda a, b: scalarize(ad.mul(a, b)), [t((3, 4)), t((3, 4))]),
        ("scalar_mul", lambda a: scalarize(ad.scalar_mul(a, -2.5)), [t((3, 4))]),
        ("matmul", lambda a, b: scalarize(ad.matmul(a, b)), [t((3, 4)), t((4, 2))]),
        ("transpose", lambda a: scalarize(ad.transpose(a)), [t((3, 4))]),
        ("mean-ax0", lambda a: scalarize(ad.mean(a, axis=0)), [t((5, 3))]),
        ("mean-ax1", lambda a: scalarize(ad.mean(a, axis=1)), [t((5, 3))]),
        ("relu", lambda a: scalarize(ad.relu(a)), [t((4, 4), off_kink=True)]),
        ("softmax", lambda a: scalarize(ad.softmax(a)), [t((4, 3))]),
        ("log_softmax", lambda a: scalarize(ad.log_softmax(a)), [t((4, 3))]),
        ("log", lambda a: scalarize(ad.log(a)), [t((3, 3), positive=True)]),
        ("sigmoid", lambda a: scalarize(ad.sigmoid(a)), [t((4, 2))]),
        ("sum_all", lambda a: ad.sum_all(a), [t((3, 4))]),
        ("mean_of_squares", lambda a: ad.mean_of_squares(a), [t((3, 4))]),
        ("diag", lambda a: scalarize(ad.diag(a)), [t((5,))]),
    ]


def check_primitive_gradients(seed: int) -> PropResult:
    worst = 0.0
    for trial in range(3):
        rng = np.random.default_rng([seed, 7, trial])
        for name, fn, inputs in _primitive_cases(rng):
            report = ad.grad_check(fn, inputs)
            worst = max(worst, report.max_rel_err)
            if not report.passed:
                return PropResult("grad-primitives", False,
                                  f"{name}: rel err {report.max_rel_err:.3g}")
    return PropResult("grad-primitives", True, f"max rel err {worst:.3g}")


def check_sup_loss_gradient(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 11])
    spec = _tiny_net()
    flat = nets.init_params(spec, seed)
    params = nets.bind_params(flat, spec, requires_grad=True)
    x = ad.Tensor(rng.standard_normal((6, spec.input_dim)))
    y = rng.integers(0, spec.num_classes, 6)

    def loss_fn(*ps):
        ps = list(ps)
        return pl.sup_loss(nets.forward_logits(ps, nets.forward_features(ps, x)), y)

    report = ad.grad_check(loss_fn, params)
    return PropResult("grad-sup-loss", report.passed,
                      f"max rel err {report.max_rel_err:.3g}")


def check_pl_loss_gradient(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 13])
    spec = _tiny_net()
    flat = nets.init_params(spec, seed + 1)
    params = nets.bind_params(flat, spec, requires_grad=True)
    x = ad.Tensor(rng.standard_normal((8, spec.input_dim)))
    # fixed empirical logits with a spread of confidences so the gate is
    # partly open and stays put while inputs are perturbed
    emp = ad.Tensor(2.0 * rng.standard_normal((8, spec.num_classes)))
    pb = pl.make_pseudo_labels(emp, eta=0.6)
    if not pb.mask.any():
        return PropResult("grad-pl-loss", False, "gate never opened")

    def loss_fn(*ps):
        ps = list(ps)
        return pl.pl_loss(pb, nets.forward_logits(ps, nets.forward_features(ps, x)))

    report = ad.grad_check(loss_fn, params)
    return PropResult("grad-pl-loss", report.passed,
                      f"max rel err {report.max_rel_err:.3g}")


def check_fsr_loss_gradient(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 17])
    d, n = 4, 6
    basic = ad.Tensor(rng.standard_normal((n, d)), requires_grad=True)
    emp = fsr.centralize(ad.Tensor(rng.standard_normal((n, d))))
    mapping = ad.Tensor(np.eye(d) + 0.1 * rng.standard_normal((d, d)),
                        requires_grad=True)
    eps_logits = ad.Tensor(rng.standard_normal(d), requires_grad=True)

    def loss_fn(u, c, rho):
        pair = fsr.FeaturePair(basic=fsr.centralize(u), empirical=emp)
        return fsr.fsr_loss(pair, fsr.FsrParams(mapping=c, eps_logits=rho),
                            beta=1.0)

    report = ad.grad_check(loss_fn, [basic, mapping, eps_logits])
    return PropResult("grad-fsr-loss", report.passed,
                      f"max rel err {report.max_rel_err:.3g}")


def check_total_loss_composition(seed: int) -> PropResult:
    """backward through the combined loss distributes over the parts:
    grad(l_sup + lam*(l_fre + l_pl)) == grad(l_sup) + lam*grad(l_fre)
    + lam*grad(l_pl), each part backwarded in its own graph."""
    rng = np.random.default_rng([seed, 19])
    spec = _tiny_net()
    lam = 20.0
    flat = nets.init_params(spec, seed + 2)
    xl = ad.Tensor(rng.standard_normal((4, spec.input_dim)))
    yl = rng.integers(0, spec.num_classes, 4)
    xu = ad.Tensor(rng.standard_normal((6, spec.input_dim)))
    emp_feats = fsr.centralize(ad.Tensor(rng.standard_normal((6, spec.feature_dim))))
    emp_logits = ad.Tensor(2.0 * rng.standard_normal((6, spec.num_classes)))
    pb = pl.make_pseudo_labels(emp_logits, eta=0.6)
    fsr_init = fsr.FsrParams.init(spec.feature_dim)

    def pieces():
        params = nets.bind_params(flat.copy(), spec, requires_grad=True)
        mapping = ad.Tensor(fsr_init.mapping.data.copy(), requires_grad=True)
        rho = ad.Tensor(fsr_init.eps_logits.data.copy(), requires_grad=True)
        l_sup = pl.sup_loss(
            nets.forward_logits(params, nets.forward_features(params, xl)), yl)
        feats_u = nets.forward_features(params, xu)
        logits_u = nets.forward_logits(params, feats_u)
        pair = fsr.FeaturePair(basic=fsr.centralize(feats_u), empirical=emp_feats)
        l_fre = fsr.fsr_loss(pair, fsr.FsrParams(mapping=mapping, eps_logits=rho),
                             beta=1.0)
        l_pl = pl.pl_loss(pb, logits_u)
        return params, mapping, rho, l_sup, l_fre, l_pl

    def grads_of(loss, params, mapping, rho):
        ad.backward(loss)
        g = np.concatenate([nets.gather_grads(params, spec),
                            np.ravel(mapping.grad) if mapping.grad is not None
                            else np.zeros(mapping.data.size),
                            rho.grad if rho.grad is not None
                            else np.zeros(rho.data.size)])
        return g

    params, mapping, rho, l_sup, l_fre, l_pl = pieces()
    combined = grads_of(pl.total_loss(l_sup, l_fre, l_pl, lam), params, mapping, rho)

    separate = np.zeros_like(combined)
    for weight, pick in ((1.0, 0), (lam, 1), (lam, 2)):
        params, mapping, rho, *losses = pieces()
        separate += weight * grads_of(losses[pick], params, mapping, rho)

    dev = float(np.max(np.abs(combined - separate)))
    scale = 1.0 + float(np.max(np.abs(combined)))
    return PropResult("grad-total-compose", dev <= 1e-10 * scale,
                      f"max dev {dev:.3g}")


def check_trace_conjugation(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 23])
    worst = 0.0
    for trial in range(500):
        d = int(rng.integers(2, 9))
        a = rng.standard_normal((d, d))
        sigma = a.T @ a
        while True:
            p = rng.standard_normal((d, d))
            try:
                t_conj, t_base = fsr.trace_conjugation_oracle(sigma, p)
            except ValueError:
                continue
            break
        rel = abs(t_conj - t_base) / max(abs(t_base), 1.0)
        worst = max(worst, rel)
        if rel > 1e-9:
            return PropResult("trace-conjugation", False,
                              f"trial {trial}: rel dev {rel:.3g}")
    return PropResult("trace-conjugation", True, f"max rel dev {worst:.3g}")


def check_covariance_invariance(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 29])
    for trial in range(300):
        d = int(rng.integers(2, 6))
        x = rng.standard_normal((20, d))
        t = 10.0 * rng.standard_normal(d)
        r, _ = np.linalg.qr(rng.standard_normal((d, d)))
        report = fsr.covariance_invariance_oracle(x, t, r)
        if not report.passed:
            return PropResult("covariance-invariance", False,
                              f"trial {trial}: translation {report.translation_dev:.3g}, "
                              f"rotation {report.rotation_rel_dev:.3g}")
    return PropResult("covariance-invariance", True, "300 trials")


def check_ema_closed_form(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 31])
    spec = _tiny_net()
    worst = 0.0
    for m in (0.0, 0.5, 0.9, 0.97):
        dual = nets.init_pair(spec, seed)
        dual.empirical[:] = rng.standard_normal(dual.empirical.size)
        start = dual.empirical.copy()
        target = dual.basic.copy()
        for k in range(1, 101):
            nets.ema_update(dual, m)
            closed = (m ** k) * start + (1.0 - m ** k) * target
            worst = max(worst, float(np.max(np.abs(dual.empirical - closed))))
    return PropResult("ema-closed-form", worst <= 1e-12, f"max dev {worst:.3g}")


def check_momentum_schedule(seed: int) -> PropResult:
    del seed
    m0 = 0.97
    if nets.momentum_schedule(0, m0) != 0.0:
        return PropResult("momentum-schedule", False, "nonzero at iteration 0")
    horizon = int(np.ceil(1.0 / (1.0 - m0)))
    vals = [nets.momentum_schedule(i, m0) for i in range(horizon + 10)]
    monotone = all(b >= a for a, b in zip(vals, vals[1:]))
    saturated = all(v == m0 for v in vals[horizon:])
    bounded = all(0.0 <= v <= m0 for v in vals)
    ok = monotone and saturated and bounded
    return PropResult("momentum-schedule", ok,
                      "ramp 0 -> m0, saturates at 1/(1-m0)" if ok else "ramp broken")


def check_fsr_zero_case(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 37])
    d, n = 4, 8
    u = fsr.centralize(ad.Tensor(rng.standard_normal((n, d))))
    params = fsr.FsrParams(mapping=ad.Tensor(np.eye(d), requires_grad=True),
                           eps_logits=ad.Tensor(np.zeros(d), requires_grad=True))
    pair = fsr.FeaturePair(basic=ad.Tensor(u.data.copy(), requires_grad=True),
                           empirical=ad.Tensor(u.data.copy()))
    ones = ad.Tensor(np.ones(d))
    base = fsr.fsr_loss(pair, params, beta=1.0, eps=ones).item()
    if not base < 1e-24:
        return PropResult("fsr-zero-case", False, f"base loss {base:.3g}")
    for i in range(d):
        for j in range(d):
            bumped = np.eye(d)
            bumped[i, j] += 1e-3
            poked = fsr.FsrParams(mapping=ad.Tensor(bumped, requires_grad=True),
                                  eps_logits=params.eps_logits)
            if not fsr.fsr_loss(pair, poked, beta=1.0, eps=ones).item() > 0.0:
                return PropResult("fsr-zero-case", False,
                                  f"insensitive to C[{i},{j}]")
    return PropResult("fsr-zero-case", True, f"base {base:.3g}, all entries sensitive")


def check_loss_zero_cases(seed: int) -> PropResult:
    rng = np.random.default_rng([seed, 41])
    # a uniform predictor never clears a 0.95 gate, so the pseudo-label
    # loss is exactly zero
    flat_logits = ad.Tensor(np.zeros((6, 3)))
    pb = pl.make_pseudo_labels(flat_logits, eta=0.95)
    if pb.mask.any():
        return PropResult("loss-zero-cases", False, "gate opened on uniform logits")
    l = pl.pl_loss(pb, ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True))
    if l.item() != 0.0:
        return PropResult("loss-zero-cases", False, f"closed gate gave {l.item()}")
    # lam = 0 makes the combined loss collapse onto the supervised term
    l_sup = ad.Tensor(1.2345)
    total = pl.total_loss(l_sup, ad.Tensor(0.5), ad.Tensor(0.25), 0.0)
    if total.item() != l_sup.item():
        return PropResult("loss-zero-cases", False, "lam=0 total != l_sup")
    return PropResult("loss-zero-cases", True, "")


ALL_CHECKS = (
    check_primitive_gradients,
    check_sup_loss_gradient,
    check_pl_loss_gradient,
    check_fsr_loss_gradient,
    check_total_loss_composition,
    check_trace_conjugation,
    check_covariance_invariance,
    check_ema_closed_form,
    check_momentum_schedule,
    check_fsr_zero_case,
    check_loss_zero_cases,
)


def run_all(seed: int = 0) -> list:
    results = []
    for check in ALL_CHECKS:
        try:
            results.append(check(seed))
        except Exception as exc:  # a crash is a failed property, not a crash
            name = check.__name__.replace("check_", "").replace("_", "-")
            results.append(PropResult(name, False, f"raised {exc!r}"))
    return results


def format_report(results) -> str:
    lines = []
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        lines.append(f"{mark}  {r.name}" + (f"  ({r.detail})" if r.detail else ""))
    failed = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - failed}/{len(results)} properties passed")
    return "\n".join(lines)
