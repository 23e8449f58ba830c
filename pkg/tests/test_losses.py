"""Objectives against scalar-loop oracles and identity cases."""

from __future__ import annotations

import numpy as np
import pytest

from simtpr import losses as L
from simtpr import model as M
from simtpr.ndgrad import Tensor, backward, ops, tensor
from simtpr.verify import (
    oracle_action_loss,
    oracle_contrastive_loss,
    oracle_cross_correlation,
    oracle_decorrelation_loss,
    oracle_recon_loss,
    oracle_similarity_distance,
    oracle_similarity_loss,
)


def unit_rows(rng, n, t, d):
    x = rng.standard_normal((n, t, d))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def t64(arr, grad=False):
    return tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------

def test_similarity_perfect_prediction_zero():
    rng = np.random.default_rng(0)
    z = unit_rows(rng, 2, 5, 4)
    q = np.empty_like(z)
    q[:, :4] = z[:, 1:]
    q[:, 4] = z[:, 0]  # ignored by k=1 alignment
    assert abs(L.similarity_distance(t64(q), t64(z), 1).item()) < 1e-12


def test_similarity_antipodal_is_four():
    rng = np.random.default_rng(1)
    z = unit_rows(rng, 3, 4, 6)
    q = np.empty_like(z)
    q[:, :3] = -z[:, 1:]
    q[:, 3] = z[:, 0]
    assert abs(L.similarity_distance(t64(q), t64(z), 1).item() - 4.0) < 1e-9


def test_similarity_equals_two_minus_two_cosine():
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = unit_rows(rng, 2, 6, 5)
        z = unit_rows(rng, 2, 6, 5)
        k = int(rng.integers(1, 5))
        got = L.similarity_distance(t64(q), t64(z), k).item()
        cos = []
        for n in range(2):
            for t in range(6 - k):
                cos.append(float(q[n, t] @ z[n, t + k]))
        want = 2.0 - 2.0 * float(np.mean(cos))
        assert abs(got - want) < 1e-6


def test_similarity_matches_oracle_50_cases():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n, t, d = (int(rng.integers(1, 5)), int(rng.integers(2, 8)),
                   int(rng.integers(2, 8)))
        q = unit_rows(rng, n, t, d)
        z = unit_rows(rng, n, t, d)
        k = int(rng.integers(1, t))
        got = L.similarity_distance(t64(q), t64(z), k).item()
        want = oracle_similarity_distance(q, z, k)
        assert abs(got - want) / max(abs(want), 1e-12) < 1e-6


def test_similarity_rejects_large_k():
    rng = np.random.default_rng(4)
    q = t64(unit_rows(rng, 1, 3, 4))
    with pytest.raises(ValueError):
        L.similarity_distance(q, q, 3)


def test_similarity_loss_symmetric_inputs():
    rng = np.random.default_rng(5)
    q = unit_rows(rng, 2, 5, 4)
    z = unit_rows(rng, 2, 5, 4)
    full = L.similarity_loss(t64(q), t64(q), t64(z), t64(z), 1).item()
    one = L.similarity_distance(t64(q), t64(z), 1).item()
    assert abs(full - one) < 1e-9


def test_similarity_loss_is_mean_of_sides():
    rng = np.random.default_rng(6)
    q1, q2 = unit_rows(rng, 2, 5, 4), unit_rows(rng, 2, 5, 4)
    z1, z2 = unit_rows(rng, 2, 5, 4), unit_rows(rng, 2, 5, 4)
    got = L.similarity_loss(t64(q1), t64(q2), t64(z1), t64(z2), 1).item()
    want = oracle_similarity_loss(q1, q2, z1, z2, 1)
    assert abs(got - want) < 1e-9


def test_similarity_loss_blocks_target_gradients_bitwise():
    rng = np.random.default_rng(7)
    q1 = t64(unit_rows(rng, 2, 4, 3), grad=True)
    q2 = t64(unit_rows(rng, 2, 4, 3), grad=True)
    z1 = t64(unit_rows(rng, 2, 4, 3), grad=True)
    z2 = t64(unit_rows(rng, 2, 4, 3), grad=True)
    backward(L.similarity_loss(q1, q2, z1, z2, 1))
    assert z1.grad is None and z2.grad is None  # exactly zero flow, not approx
    assert q1.grad is not None and np.any(q1.grad != 0)


# ---------------------------------------------------------------------------
# cross-correlation and decorrelation
# ---------------------------------------------------------------------------

def test_cross_correlation_self_diagonal_one():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((12, 5))
    c = L.cross_correlation(t64(z), t64(z)).data
    np.testing.assert_allclose(np.diag(c), 1.0, atol=1e-6)


def test_cross_correlation_orthogonal_columns_zero():
    z1 = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    z2 = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    c = L.cross_correlation(t64(z1), t64(z2)).data
    assert abs(c[0, 0]) < 1e-6


def test_cross_correlation_hand_case_matches_pearson():
    z1 = np.array([[1.0, 2.0], [2.0, 0.0], [3.0, -1.0], [4.0, 5.0]])
    z2 = np.array([[0.5, 1.0], [1.5, 3.0], [-1.0, 2.0], [2.0, -2.0]])
    got = L.cross_correlation(t64(z1), t64(z2)).data
    want = oracle_cross_correlation(z1, z2)
    np.testing.assert_allclose(got, want, atol=1e-9)
    # double-check one entry against the numpy corrcoef convention
    r = np.corrcoef(z1[:, 0], z2[:, 1])[0, 1]
    assert abs(got[0, 1] - r) < 1e-9


def test_cross_correlation_entries_bounded():
    rng = np.random.default_rng(9)
    for _ in range(10):
        z1 = rng.standard_normal((6, 4)) * rng.uniform(0.1, 10)
        z2 = rng.standard_normal((6, 4)) * rng.uniform(0.1, 10)
        c = L.cross_correlation(t64(z1), t64(z2)).data
        assert np.abs(c).max() <= 1.0 + 1e-5


def test_cross_correlation_constant_column_penalizes_collapse():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((8, 3))
    z[:, 1] = 2.5  # fully collapsed feature
    c = L.cross_correlation(t64(z), t64(z)).data
    assert np.all(np.isfinite(c))
    assert abs(c[1, 1]) < 1e-6  # zero row -> on-diagonal term contributes (1-0)^2
    with pytest.raises(ValueError):
        L.cross_correlation(t64(z[:1]), t64(z[:1]))


def test_decorrelation_identity_zero():
    total, on, off = L.decorrelation_loss(t64(np.eye(5)), 0.005)
    assert total.item() == 0.0 and on.item() == 0.0 and off.item() == 0.0


def test_decorrelation_all_ones_hand_value():
    total, on, off = L.decorrelation_loss(t64(np.ones((2, 2))), 0.005)
    assert abs(total.item() - 0.01) < 1e-12
    assert on.item() == 0.0
    assert abs(off.item() - 2.0) < 1e-12


def test_decorrelation_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        d = int(rng.integers(2, 8))
        c = rng.standard_normal((d, d))
        lam = float(rng.uniform(0, 0.1))
        total, on, off = L.decorrelation_loss(t64(c), lam)
        want_total, want_on, want_off = oracle_decorrelation_loss(c, lam)
        assert abs(total.item() - want_total) / max(abs(want_total), 1e-12) < 1e-6
        assert abs(on.item() - want_on) < 1e-9 * max(1, abs(want_on))
        assert abs(off.item() - want_off) < 1e-9 * max(1, abs(want_off))
        assert total.item() >= 0.0


# ---------------------------------------------------------------------------
# contrastive
# ---------------------------------------------------------------------------

def test_contrastive_single_pair_zero():
    rng = np.random.default_rng(12)
    q = unit_rows(rng, 1, 2, 4)[0, :1]
    z = unit_rows(rng, 1, 2, 4)[0, :1]
    assert abs(L.contrastive_loss(t64(q), t64(z), 0.1).item()) < 1e-9


def test_contrastive_identical_rows_log_m():
    rng = np.random.default_rng(13)
    row = unit_rows(rng, 1, 2, 6)[0, :1]
    for m in (2, 5, 9):
        q = np.repeat(row, m, axis=0)
        val = L.contrastive_loss(t64(q), t64(q), 0.1).item()
        assert abs(val - np.log(m)) < 1e-6


def test_contrastive_two_rows_hand_softmax():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    z = np.array([[0.8, 0.6], [-0.6, 0.8]])
    tau = 0.1
    got = L.contrastive_loss(t64(q), t64(z), tau).item()
    logits = q @ z.T / tau
    want = 0.0
    for i in range(2):
        e = np.exp(logits[i] - logits[i].max())
        want += -np.log(e[i] / e.sum())
    want /= 2
    assert abs(got - want) < 1e-9
    assert abs(got - oracle_contrastive_loss(q, z, tau)) < 1e-9


def test_contrastive_matches_oracle_50_cases():
    rng = np.random.default_rng(14)
    for _ in range(50):
        m, d = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        q = rng.standard_normal((m, d))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        z = rng.standard_normal((m, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        got = L.contrastive_loss(t64(q), t64(z), 0.1).item()
        want = oracle_contrastive_loss(q, z, 0.1)
        assert abs(got - want) / max(abs(want), 1e-12) < 1e-6
        assert got >= -1e-9


def test_contrastive_decreases_when_positive_aligns():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    q_far = np.array([[np.cos(1.2), np.sin(1.2)], [0.0, 1.0], [-1.0, 0.0]])
    q_near = np.array([[np.cos(0.2), np.sin(0.2)], [0.0, 1.0], [-1.0, 0.0]])
    far = L.contrastive_loss(t64(q_far), t64(z), 0.1).item()
    near = L.contrastive_loss(t64(q_near), t64(z), 0.1).item()
    assert near < far


def test_contrastive_rejects_bad_temperature():
    q = t64(np.eye(2))
    with pytest.raises(ValueError):
        L.contrastive_loss(q, q, 0.0)


# ---------------------------------------------------------------------------
# action loss
# ---------------------------------------------------------------------------

def test_action_loss_uniform_logits():
    logits = np.zeros((2, 3, 5))
    actions = np.random.default_rng(15).integers(0, 5, size=(2, 3))
    got = L.action_loss(t64(logits), actions).item()
    assert abs(got - np.log(5.0)) < 1e-6


def test_action_loss_confident_correct():
    logits = np.array([[[10.0, 0.0, 0.0]]])
    got = L.action_loss(t64(logits), np.array([[0]])).item()
    want = np.log(1.0 + 2.0 * np.exp(-10.0))  # about 9.08e-5
    assert abs(got - want) < 1e-10
    assert abs(got - 9.079573746725622e-05) < 1e-12


def test_action_loss_matches_oracle():
    rng = np.random.default_rng(16)
    for _ in range(50):
        n, t, n_a = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(2, 6))
        logits = rng.standard_normal((n, t, n_a)) * 3
        actions = rng.integers(0, n_a, size=(n, t))
        got = L.action_loss(t64(logits), actions).item()
        want = oracle_action_loss(logits, actions)
        assert abs(got - want) / max(abs(want), 1e-12) < 1e-6


def test_action_loss_rejects_out_of_range():
    with pytest.raises(ValueError, match="range"):
        L.action_loss(t64(np.zeros((1, 2, 3))), np.array([[0, 3]]))


# ---------------------------------------------------------------------------
# reconstruction loss
# ---------------------------------------------------------------------------

def test_recon_perfect_zero_and_antipodal_four():
    rng = np.random.default_rng(17)
    z = unit_rows(rng, 2, 4, 5)
    mask = np.zeros((2, 4), dtype=bool)
    mask[0, 1] = mask[1, 3] = True
    assert abs(L.recon_loss(t64(z), t64(z), mask).item()) < 1e-12
    assert abs(L.recon_loss(t64(-z), t64(z), mask).item() - 4.0) < 1e-9


def test_recon_matches_oracle():
    rng = np.random.default_rng(18)
    for _ in range(50):
        n, t, d = int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
        q = unit_rows(rng, n, t, d)
        z = unit_rows(rng, n, t, d)
        mask = rng.uniform(size=(n, t)) < 0.5
        if not mask.any():
            mask[0, 0] = True
        got = L.recon_loss(t64(q), t64(z), mask).item()
        want = oracle_recon_loss(q, z, mask)
        assert abs(got - want) / max(abs(want), 1e-12) < 1e-6


def test_recon_rejects_empty_mask():
    rng = np.random.default_rng(19)
    z = t64(unit_rows(rng, 1, 3, 2))
    with pytest.raises(ValueError, match="empty"):
        L.recon_loss(z, z, np.zeros((1, 3), dtype=bool))


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

def _fake_forward(rng, n=2, t=5, d=4, with_logits=False, n_a=3):
    fwd = M.StateForward(
        z1=t64(unit_rows(rng, n, t, d), grad=True),
        z2=t64(unit_rows(rng, n, t, d), grad=True),
        q1=t64(unit_rows(rng, n, t, d), grad=True),
        q2=t64(unit_rows(rng, n, t, d), grad=True))
    if with_logits:
        return M.DemoForward(z1=fwd.z1, z2=fwd.z2, q1=fwd.q1, q2=fwd.q2,
                             logits1=t64(rng.standard_normal((n, t, n_a)), grad=True),
                             logits2=t64(rng.standard_normal((n, t, n_a)), grad=True))
    return fwd


def test_total_loss_lambda_zero_equals_sim():
    rng = np.random.default_rng(20)
    fwd = _fake_forward(rng)
    settings = L.LossSettings(kind="mse", k=1, lambda_d=0.0)
    bd = L.total_loss(settings, fwd)
    sim = L.similarity_loss(fwd.q1, fwd.q2, fwd.z1, fwd.z2, 1)
    assert bd.total.item() == pytest.approx(sim.item(), abs=0)
    assert bd.decorr is None and bd.action is None


def test_total_loss_default_weights():
    rng = np.random.default_rng(21)
    fwd = _fake_forward(rng, with_logits=True)
    actions = rng.integers(0, 3, size=(2, 5))
    settings = L.LossSettings(kind="mse", k=1, lambda_d=0.01, lambda_o=0.005,
                              lambda_a=1.0)
    bd = L.total_loss(settings, fwd, actions)
    want = bd.sim + 0.01 * bd.decorr + 1.0 * bd.action
    assert abs(bd.total.item() - want) < 1e-6
    assert abs(bd.total.item() - bd.weighted_sum()) < 1e-6


def test_total_loss_random_weighted_sum():
    rng = np.random.default_rng(22)
    for _ in range(10):
        fwd = _fake_forward(rng)
        lam_d = float(rng.uniform(0, 0.2))
        settings = L.LossSettings(kind="mse", k=1, lambda_d=lam_d,
                                  lambda_o=float(rng.uniform(0, 0.05)))
        bd = L.total_loss(settings, fwd)
        assert abs(bd.total.item() - bd.weighted_sum()) < 1e-6


def test_total_loss_view_swap_invariance():
    rng = np.random.default_rng(23)
    for kind in ("mse", "contrastive"):
        fwd = _fake_forward(rng)
        swapped = M.StateForward(z1=fwd.z2, z2=fwd.z1, q1=fwd.q2, q2=fwd.q1)
        settings = L.LossSettings(kind=kind, k=1, lambda_d=0.01)
        a = L.total_loss(settings, fwd).total.item()
        b = L.total_loss(settings, swapped).total.item()
        assert abs(a - b) < 1e-6


def test_total_loss_recon_requires_masks():
    rng = np.random.default_rng(24)
    fwd = _fake_forward(rng)
    settings = L.LossSettings(kind="recon", k=1, lambda_d=0.0)
    with pytest.raises(ValueError, match="mask"):
        L.total_loss(settings, fwd)
    fwd.mask1 = np.ones((2, 5), dtype=bool)
    fwd.mask2 = np.ones((2, 5), dtype=bool)
    bd = L.total_loss(settings, fwd)
    assert bd.recon is not None and bd.sim is None


def test_loss_settings_rejects_unknown_kind():
    with pytest.raises(ValueError, match="similarity-type"):
        L.LossSettings(kind="nothing")
