"""Renormalization penalty and the invariance oracles behind it."""

import numpy as np
import pytest

from frematch import autodiff as ad
from frematch import fsr


def _pair(rng, n=6, d=4, delta=None):
    basic_vals = rng.standard_normal((n, d))
    emp_vals = basic_vals if delta is None else basic_vals + delta
    basic = fsr.centralize(ad.Tensor(basic_vals, requires_grad=True))
    return fsr.FeaturePair(basic=basic, empirical=ad.Tensor(emp_vals - emp_vals.mean(axis=0)))


def test_centralize_hand_case():
    out = fsr.centralize(ad.Tensor([[1.0, 1.0], [3.0, 3.0]]))
    assert np.array_equal(out.data, [[-1.0, -1.0], [1.0, 1.0]])


def test_centralize_single_row_is_zero():
    out = fsr.centralize(ad.Tensor([[2.0, -5.0, 7.0]]))
    assert np.array_equal(out.data, np.zeros((1, 3)))


def test_centralized_columns_have_zero_mean():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        out = fsr.centralize(ad.Tensor(rng.standard_normal((7, 5)) * 3.0 + 2.0))
        assert np.max(np.abs(out.data.mean(axis=0))) < 1e-12


def test_covariance_hand_case():
    cov = fsr.covariance(ad.Tensor([[1.0, 0.0], [-1.0, 0.0]]))
    assert np.array_equal(cov.data, [[2.0, 0.0], [0.0, 0.0]])


def test_covariance_symmetric():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        cov = fsr.covariance(ad.Tensor(rng.standard_normal((9, 5))))
        assert np.max(np.abs(cov.data - cov.data.T)) == 0.0


def _power_iteration(mat, iters=2000, seed=0):
    v = np.random.default_rng(seed).standard_normal(mat.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return float(v @ mat @ v)


def test_covariance_positive_semidefinite():
    # eigen-oracle built from power iteration alone: largest eigenvalue
    # of sigma, then of (lam_max I - sigma), gives the smallest
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((12, 5))
        sigma = fsr.covariance(ad.Tensor(x - x.mean(axis=0))).data
        lam_max = _power_iteration(sigma, seed=seed)
        spread = _power_iteration(lam_max * np.eye(5) - sigma, seed=seed + 1)
        lam_min = lam_max - spread
        assert lam_min >= -1e-10, f"seed {seed}: lam_min {lam_min:.3e}"


def test_fsr_loss_exact_zero_case():
    rng = np.random.default_rng(1)
    pair = _pair(rng)
    params = fsr.FsrParams.init(4)
    ones = ad.Tensor(np.ones(4))
    loss = fsr.fsr_loss(pair, params, beta=1.0, eps=ones)
    assert loss.item() < 1e-24
    assert loss.item() == 0.0


def test_fsr_loss_perturbed_by_delta():
    rng = np.random.default_rng(2)
    delta = rng.standard_normal((6, 4)) * 0.1
    delta -= delta.mean(axis=0)  # keep the blocks centralized
    pair = _pair(rng, delta=delta)
    params = fsr.FsrParams.init(4)
    loss = fsr.fsr_loss(pair, params, beta=1.0, eps=ad.Tensor(np.ones(4)))
    assert abs(loss.item() - np.mean(delta * delta)) < 1e-15


def test_fsr_loss_beta_scales_relaxation_term():
    rng = np.random.default_rng(3)
    pair = _pair(rng)
    params = fsr.FsrParams.init(4)
    params.mapping.data[0, 1] += 0.3  # makes C^T C - diag(eps) nonzero
    l1 = fsr.fsr_loss(pair, params, beta=1.0).item()
    l2 = fsr.fsr_loss(pair, params, beta=2.0).item()
    relax = l2 - l1
    assert relax > 0.0
    l4 = fsr.fsr_loss(pair, params, beta=4.0).item()
    assert abs((l4 - l1) - 3.0 * relax) < 1e-12


def test_fsr_loss_sensitive_to_any_mapping_entry():
    rng = np.random.default_rng(4)
    pair = _pair(rng)
    params = fsr.FsrParams.init(4)
    ones = ad.Tensor(np.ones(4))
    for i in range(4):
        for j in range(4):
            params.mapping.data[i, j] += 1e-3
            assert fsr.fsr_loss(pair, params, beta=1.0, eps=ones).item() > 0.0
            params.mapping.data[i, j] -= 1e-3


def test_fsr_loss_gradients_match_central_differences():
    rng = np.random.default_rng(5)
    basic_raw = ad.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    emp = ad.Tensor(rng.standard_normal((6, 4)))
    emp = ad.Tensor(emp.data - emp.data.mean(axis=0))
    mapping = ad.Tensor(np.eye(4) + 0.1 * rng.standard_normal((4, 4)), requires_grad=True)
    eps_logits = ad.Tensor(rng.standard_normal(4), requires_grad=True)

    def loss_fn(c, rho, u):
        pair = fsr.FeaturePair(basic=fsr.centralize(u), empirical=emp)
        return fsr.fsr_loss(pair, fsr.FsrParams(mapping=c, eps_logits=rho), beta=1.3)

    report = ad.grad_check(loss_fn, [mapping, eps_logits, basic_raw], step=1e-5, tol=1e-4)
    assert report.passed, f"rel err {report.max_rel_err:.3e}"


def test_fsr_loss_gradient_reaches_rho_but_not_empirical():
    rng = np.random.default_rng(6)
    pair = _pair(rng, delta=0.2 * rng.standard_normal((6, 4)))
    params = fsr.FsrParams.init(4)
    params.mapping.data += 0.05 * rng.standard_normal((4, 4))
    loss = fsr.fsr_loss(pair, params, beta=1.0)
    ad.backward(loss)
    assert params.eps_logits.grad is not None
    assert np.any(params.eps_logits.grad != 0.0)
    assert params.mapping.grad is not None
    assert pair.empirical.grad is None


def test_feature_pair_rejects_live_empirical_block():
    live = ad.Tensor(np.zeros((3, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="detached"):
        fsr.FeaturePair(basic=ad.Tensor(np.zeros((3, 2)), requires_grad=True),
                        empirical=live)


def test_fsr_loss_rejects_dim_mismatch():
    rng = np.random.default_rng(7)
    pair = _pair(rng, d=3)
    params = fsr.FsrParams.init(4)
    with pytest.raises(ad.ShapeError):
        fsr.fsr_loss(pair, params, beta=1.0)


def test_eps_stays_in_unit_interval():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = fsr.FsrParams(mapping=ad.Tensor(np.eye(3), requires_grad=True),
                               eps_logits=ad.Tensor(rng.standard_normal(3) * 50.0,
                                                    requires_grad=True))
        eps = params.eps().data
        # sigmoid keeps the box constraint by construction; fp64 may
        # round the tails onto the endpoints themselves
        assert np.all(eps >= 0.0) and np.all(eps <= 1.0)


def test_mean_of_squares_permutation_and_scaling():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((5, 4))
    base = ad.mean_of_squares(ad.Tensor(a)).item()
    perm = a.reshape(-1)[rng.permutation(20)].reshape(4, 5)
    assert abs(ad.mean_of_squares(ad.Tensor(perm)).item() - base) < 1e-15
    assert abs(ad.mean_of_squares(ad.Tensor(2.0 * a)).item() - 4.0 * base) < 1e-12


# --- trace conjugation -------------------------------------------------------


def test_trace_conjugation_hand_case():
    left, right = fsr.trace_conjugation_oracle(np.diag([2.0, 3.0]),
                                               np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert left == pytest.approx(5.0, abs=1e-12)
    assert right == 5.0


def test_trace_conjugation_500_trials():
    trials = 0
    seed = 0
    while trials < 500:
        rng = np.random.default_rng(seed)
        seed += 1
        d = int(rng.integers(2, 9))
        x = rng.standard_normal((d + 4, d))
        sigma = (x - x.mean(axis=0)).T @ (x - x.mean(axis=0))
        p = rng.standard_normal((d, d))
        if abs(np.linalg.det(p)) <= 1e-8:
            continue
        left, right = fsr.trace_conjugation_oracle(sigma, p)
        assert abs(left - right) <= 1e-9 * max(abs(right), 1.0)
        trials += 1


def test_trace_conjugation_rejects_singular_p():
    sigma = np.eye(3)
    singular = np.zeros((3, 3))
    singular[0, 0] = 1.0
    with pytest.raises(ValueError, match="singular"):
        fsr.trace_conjugation_oracle(sigma, singular)


def test_trace_conjugation_rejects_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        fsr.trace_conjugation_oracle(np.eye(3), np.eye(2))


# --- covariance invariances --------------------------------------------------


def _random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def test_covariance_invariance_300_trials():
    for seed in range(300):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 7))
        x = rng.standard_normal((int(rng.integers(d + 2, 40)), d)) * 5.0
        t = rng.standard_normal(d) * 10.0
        r = _random_rotation(rng, d)
        report = fsr.covariance_invariance_oracle(x, t, r)
        assert report.passed, (f"seed {seed}: translation {report.translation_dev:.3e} "
                               f"rotation {report.rotation_rel_dev:.3e}")


def test_covariance_invariance_rejects_non_orthogonal():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 3))
    skew = np.eye(3)
    skew[0, 1] = 0.5
    with pytest.raises(ValueError, match="orthogonal"):
        fsr.covariance_invariance_oracle(x, np.zeros(3), skew)
