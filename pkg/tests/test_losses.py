"""Loss values against brute-force oracles, plus gradient and invariance checks."""

import math

import numpy as np
import pytest

from gccd.errors import DimensionError, StateError
from gccd.losses import (
    proto_teachers,
    LossConfig,
    PrototypeBank,
    ViewPair,
    ce_loss,
    ce_loss_grad,
    kd_loss,
    kd_loss_grad,
    proto_soft_assign,
    pseudo_loss,
    pseudo_loss_grad,
    simclr_loss,
    simclr_loss_grad,
    supcon_loss,
    supcon_loss_grad,
    total_loss,
)
from gccd.nn import grad_check, l2_normalize, rng_for

CFG = LossConfig()


def unit_rows(x):
    return l2_normalize(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# brute-force oracles (independent nested-loop evaluations)
# ---------------------------------------------------------------------------

def nt_xent_oracle(h, h_prime, tau, positive_sets):
    u = unit_rows(h)
    v = unit_rows(h_prime)
    total = 0.0
    for i, positives in enumerate(positive_sets):
        denom = sum(math.exp(float(u[i] @ v[n]) / tau) for n in range(len(v)))
        anchor = 0.0
        for q in positives:
            anchor += -math.log(math.exp(float(u[i] @ v[q]) / tau) / denom)
        total += anchor / len(positives)
    return total / len(u)


def random_orthogonal(dim, seed):
    q, _ = np.linalg.qr(rng_for(seed, "orth").normal(size=(dim, dim)))
    return q


def test_simclr_two_orthogonal_pairs():
    views = ViewPair(np.array([[1.0, 0.0], [0.0, 1.0]]),
                     np.array([[1.0, 0.0], [0.0, 1.0]]))
    expected = -math.log(math.e / (math.e + 1.0))   # 0.31326...
    assert simclr_loss(views, tau=1.0) == pytest.approx(expected, abs=1e-12)


def test_simclr_rotation_invariant():
    rng = rng_for(21)
    h = rng.normal(size=(8, 16))
    h2 = rng.normal(size=(8, 16))
    q = random_orthogonal(16, 5)
    base = simclr_loss(ViewPair(h, h2), tau=0.2)
    rotated = simclr_loss(ViewPair(h @ q, h2 @ q), tau=0.2)
    assert abs(base - rotated) < 1e-10


def test_simclr_matches_nested_loop_oracle():
    rng = rng_for(33)
    h = rng.normal(size=(8, 16))
    h2 = rng.normal(size=(8, 16))
    expected = nt_xent_oracle(h, h2, 0.5, [[i] for i in range(8)])
    assert simclr_loss(ViewPair(h, h2), tau=0.5) == pytest.approx(expected, abs=1e-10)


def test_simclr_needs_two_samples():
    with pytest.raises(ValueError):
        simclr_loss(ViewPair(np.ones((1, 3)), np.ones((1, 3))), tau=1.0)


def test_supcon_single_label_identical_embeddings():
    h = np.tile([[1.0, 0.0]], (3, 1))
    views = ViewPair(h, h.copy(), labels=np.zeros(3, dtype=int))
    assert supcon_loss(views, tau=1.0) == pytest.approx(math.log(3.0), abs=1e-12)


def test_supcon_collapsed_beats_shuffled():
    # class-collapsed orthogonal embeddings score lower than mismatched labels
    h = np.array([[1.0, 0], [1.0, 0], [0, 1.0], [0, 1.0]])
    good = ViewPair(h, h.copy(), labels=np.array([0, 0, 1, 1]))
    bad = ViewPair(h, h.copy(), labels=np.array([0, 1, 0, 1]))
    assert supcon_loss(good, tau=0.5) < supcon_loss(bad, tau=0.5)


def test_supcon_matches_nested_loop_oracle():
    rng = rng_for(34)
    h = rng.normal(size=(8, 5))
    h2 = rng.normal(size=(8, 5))
    labels = np.array([0, 1, 0, 2, 1, 2, 0, 3])
    positives = []
    for i in range(8):
        q = [j for j in range(8) if j != i and labels[j] == labels[i]]
        positives.append(q if q else [i])
    expected = nt_xent_oracle(h, h2, 0.3, positives)
    got = supcon_loss(ViewPair(h, h2, labels=labels), tau=0.3)
    assert got == pytest.approx(expected, abs=1e-10)


def test_supcon_requires_labels():
    with pytest.raises(ValueError):
        supcon_loss(ViewPair(np.ones((2, 2)), np.ones((2, 2))), tau=1.0)


def test_proto_soft_assign_sharp_and_symmetric():
    bank = PrototypeBank(np.array([[1.0, 0.0], [0.0, 1.0]]))
    probs = proto_soft_assign(np.array([[1.0, 0.0]]), bank, temperature=0.01)
    assert probs[0, 0] > 0.99
    sym = proto_soft_assign(np.array([[1.0, 1.0]]), bank, temperature=0.5)
    assert np.allclose(sym[0], [0.5, 0.5], atol=1e-12)


def test_proto_soft_assign_rows_sum_to_one():
    rng = rng_for(8)
    bank = PrototypeBank(rng.normal(size=(7, 6)))
    probs = proto_soft_assign(rng.normal(size=(11, 6)), bank, temperature=0.1)
    assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12


def test_proto_soft_assign_empty_bank():
    with pytest.raises(StateError):
        proto_soft_assign(np.ones((1, 4)), PrototypeBank.empty(4), temperature=0.1)


def test_pseudo_loss_uniform_and_onehot():
    uniform = np.full((5, 4), 0.25)
    assert pseudo_loss(uniform, uniform, epsilon=0.0) == pytest.approx(math.log(4.0))
    onehot = np.zeros((3, 4))
    onehot[np.arange(3), [0, 2, 1]] = 1.0
    assert pseudo_loss(onehot, onehot, epsilon=0.0) == pytest.approx(0.0, abs=1e-12)


def test_pseudo_loss_entropy_term_exact():
    uniform = np.full((6, 5), 0.2)
    with_reg = pseudo_loss(uniform, uniform, epsilon=0.7)
    without = pseudo_loss(uniform, uniform, epsilon=0.0)
    assert without - with_reg == pytest.approx(0.7 * math.log(5.0), abs=1e-12)


def test_pseudo_loss_lower_bound():
    # loss >= -epsilon * log K
    rng = rng_for(50)
    for _ in range(20):
        logits = rng.normal(size=(6, 4)) * 3
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        q = np.exp(rng.normal(size=(6, 4)))
        q /= q.sum(axis=1, keepdims=True)
        assert pseudo_loss(p, q, epsilon=1.3) >= -1.3 * math.log(4.0) - 1e-9


def test_pseudo_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        pseudo_loss(np.full((2, 3), 1 / 3), np.full((2, 4), 0.25), epsilon=0.0)


def test_ce_loss_values_and_oracle():
    onehot = np.zeros((3, 4))
    onehot[np.arange(3), [1, 2, 0]] = 1.0
    assert ce_loss(onehot, [1, 2, 0]) == pytest.approx(0.0, abs=1e-12)
    uniform = np.full((2, 10), 0.1)
    assert ce_loss(uniform, [3, 7]) == pytest.approx(math.log(10.0))
    rng = rng_for(12)
    p = np.exp(rng.normal(size=(9, 5)))
    p /= p.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 5, size=9)
    expected = float(np.mean([-math.log(p[i, labels[i]]) for i in range(9)]))
    assert ce_loss(p, labels) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ValueError):
        ce_loss(p, [5] * 9)


def test_kd_loss_cases():
    x = rng_for(14).normal(size=(6, 8))
    assert kd_loss(x, x) == pytest.approx(0.0, abs=1e-15)
    shifted = x.copy()
    shifted[:, 0] += 1.0
    assert kd_loss(shifted, x) == pytest.approx(1.0)
    y = rng_for(15).normal(size=(6, 8))
    expected = float(np.mean([np.sum((x[i] - y[i]) ** 2) for i in range(6)]))
    assert kd_loss(x, y) == pytest.approx(expected, abs=1e-12)
    assert kd_loss(x, y) == pytest.approx(kd_loss(y, x))  # symmetric
    with pytest.raises(DimensionError):
        kd_loss(np.ones((2, 3)), np.ones((3, 3)))


def test_total_loss_weighting():
    assert total_loss(2.0, 4.0, 6.0, LossConfig(alpha=0.0, beta=0.0)) == pytest.approx(2.0)
    assert total_loss(2.0, 4.0, 6.0, LossConfig(alpha=1.0, beta=0.0)) == pytest.approx(6.0)
    # alpha=0.5, beta=0.35: 0.5*(0.65*2 + 0.35*4) + 0.5*6 = 4.35
    assert total_loss(2.0, 4.0, 6.0, LossConfig(alpha=0.5, beta=0.35)) == pytest.approx(4.35)


def test_total_loss_affine_in_each_input():
    cfg = LossConfig(alpha=0.3, beta=0.6)
    base = total_loss(1.0, 2.0, 3.0, cfg)
    assert total_loss(2.0, 2.0, 3.0, cfg) - base == pytest.approx((1 - 0.3) * (1 - 0.6))
    assert total_loss(1.0, 3.0, 3.0, cfg) - base == pytest.approx((1 - 0.3) * 0.6)
    assert total_loss(1.0, 2.0, 4.0, cfg) - base == pytest.approx(0.3)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(tau=-1.0)
    with pytest.raises(ValueError):
        LossConfig(tau_s=0.05, tau_t=0.1)   # teacher must be sharper
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)


def test_contrastive_losses_invariant_under_orthogonal_transform():
    rng = rng_for(60)
    h = rng.normal(size=(6, 8))
    h2 = rng.normal(size=(6, 8))
    labels = np.array([0, 0, 1, 1, 2, 2])
    q = random_orthogonal(8, 61)
    a = supcon_loss(ViewPair(h, h2, labels=labels), tau=0.4)
    b = supcon_loss(ViewPair(h @ q, h2 @ q, labels=labels), tau=0.4)
    assert abs(a - b) < 1e-8


# ---------------------------------------------------------------------------
# analytic gradients against finite differences (d=8, batch=6)
# ---------------------------------------------------------------------------

def _pack_views(rng):
    return rng.normal(size=(6, 8)), rng.normal(size=(6, 8))


def test_simclr_grad_check():
    h, h2 = _pack_views(rng_for(70))

    def fn(params):
        loss, dh, dh2 = simclr_loss_grad(ViewPair(params["h"], params["h2"]), tau=0.3)
        return loss, {"h": dh, "h2": dh2}

    assert grad_check(fn, {"h": h, "h2": h2}) < 1e-4


def test_supcon_grad_check():
    h, h2 = _pack_views(rng_for(71))
    labels = np.array([0, 1, 0, 2, 1, 0])

    def fn(params):
        loss, dh, dh2 = supcon_loss_grad(ViewPair(params["h"], params["h2"], labels=labels), tau=0.3)
        return loss, {"h": dh, "h2": dh2}

    assert grad_check(fn, {"h": h, "h2": h2}) < 1e-4


def test_pseudo_grad_check():
    rng = rng_for(72)
    z, z2 = _pack_views(rng)
    protos = rng.normal(size=(5, 8))
    # teachers are stop-gradient constants, so freeze them for the check
    teachers = proto_teachers(z, z2, PrototypeBank(protos.copy()), CFG)

    def fn(params):
        bank = PrototypeBank(params["protos"].copy())
        loss, dz, dz2, dp = pseudo_loss_grad(params["z"], params["z2"], bank, CFG,
                                             teachers=teachers)
        return loss, {"z": dz, "z2": dz2, "protos": dp}

    assert grad_check(fn, {"z": z, "z2": z2, "protos": protos}) < 1e-4


def test_ce_grad_check():
    rng = rng_for(73)
    z, z2 = _pack_views(rng)
    protos = rng.normal(size=(5, 8))
    labels = np.array([0, 1, 2, 3, 4, 0])

    def fn(params):
        bank = PrototypeBank(params["protos"].copy())
        loss, dz, dz2, dp = ce_loss_grad(params["z"], params["z2"], labels, bank, CFG)
        return loss, {"z": dz, "z2": dz2, "protos": dp}

    assert grad_check(fn, {"z": z, "z2": z2, "protos": protos}) < 1e-4


def test_kd_grad_check():
    rng = rng_for(74)
    proj = rng.normal(size=(6, 8))
    frozen = rng.normal(size=(6, 8))

    def fn(params):
        loss, dp = kd_loss_grad(params["p"], frozen)
        return loss, {"p": dp}

    assert grad_check(fn, {"p": proj}) < 1e-4
