import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from protogmm.errors import ContractViolation
from protogmm.losses import (
    LossConfig,
    confidence_weight,
    proto_contrastive_loss,
    proto_contrastive_loss_batch,
    weighted_cross_entropy,
)
from protogmm.proto_align import PrototypeSelection


def probs_with_max(maxes, n_classes=4):
    """Rows whose max class probability equals the requested values."""
    rows = []
    for m in maxes:
        rest = (1.0 - m) / (n_classes - 1)
        rows.append([m] + [rest] * (n_classes - 1))
    return np.array(rows)


def unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_selection(rng, d, n_neg):
    return PrototypeSelection(
        positive=unit(rng, d),
        positive_component=0,
        negatives=[(c + 1, unit(rng, d)) for c in range(n_neg)],
    )


# -- config -------------------------------------------------------------------


def test_loss_config_validation():
    LossConfig()
    with pytest.raises(ContractViolation):
        LossConfig(tau=0.0)
    with pytest.raises(ContractViolation):
        LossConfig(beta_conf=1.0)
    with pytest.raises(ContractViolation):
        LossConfig(lambda_contrast=-0.1)


# -- confidence weight -----------------------------------------------------------


def test_confidence_weight_counting():
    probs = probs_with_max([0.95, 0.85, 0.99, 0.5])
    assert confidence_weight(probs, 0.9) == 0.5


def test_confidence_weight_saturation():
    assert confidence_weight(probs_with_max([0.95, 0.97]), 0.9) == 1.0
    assert confidence_weight(probs_with_max([0.5, 0.6]), 0.9) == 0.0


def test_confidence_weight_empty_batch():
    assert confidence_weight(np.empty((0, 3)), 0.9) == 0.0


# -- weighted cross-entropy ---------------------------------------------------------


def test_ce_perfect_prediction_is_zero():
    logits = np.array([[60.0, 0.0, 0.0]])
    out = weighted_cross_entropy(logits, np.array([0]), 1.0)
    assert out.value < 1e-12
    assert_allclose(out.grad.sum(axis=1), 0.0, atol=1e-12)


def test_ce_uniform_logits_log_c():
    logits = np.zeros((3, 4))
    out = weighted_cross_entropy(logits, np.array([0, 1, 2]), 1.0)
    assert_allclose(out.value, np.log(4.0), atol=1e-12)


def test_ce_zero_weight_annihilates():
    rng = np.random.default_rng(0)
    out = weighted_cross_entropy(rng.normal(size=(5, 3)), rng.integers(0, 3, 5), 0.0)
    assert out.value == 0.0
    assert np.all(out.grad == 0.0)


def test_ce_label_out_of_range():
    with pytest.raises(ContractViolation):
        weighted_cross_entropy(np.zeros((2, 3)), np.array([0, 3]), 1.0)


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, 4)
    out = weighted_cross_entropy(logits, labels, 0.7)
    h = 1e-6
    for i in range(4):
        for c in range(3):
            lp = logits.copy()
            lm = logits.copy()
            lp[i, c] += h
            lm[i, c] -= h
            fd = (
                weighted_cross_entropy(lp, labels, 0.7).value
                - weighted_cross_entropy(lm, labels, 0.7).value
            ) / (2 * h)
            assert_allclose(out.grad[i, c], fd, atol=1e-8)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=30)
def test_ce_grad_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(1, 8)), int(rng.integers(2, 6))
    out = weighted_cross_entropy(rng.normal(size=(n, c)), rng.integers(0, c, n), float(rng.uniform(0, 1)))
    assert_allclose(out.grad.sum(axis=1), np.zeros(n), atol=1e-12)


def test_ce_batch_order_invariance():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 3))
    labels = rng.integers(0, 3, 6)
    perm = rng.permutation(6)
    a = weighted_cross_entropy(logits, labels, 1.0)
    b = weighted_cross_entropy(logits[perm], labels[perm], 1.0)
    assert_allclose(a.value, b.value, atol=1e-12)
    assert_allclose(a.grad[perm], b.grad, atol=1e-12)


# -- prototype contrastive loss --------------------------------------------------


def test_contrastive_symmetric_logits():
    # all dot products equal -> loss = ln 3, gradient points away from q+
    d = 4
    f = np.zeros(d)
    f[0] = 1.0
    q = np.zeros(d)
    q[1] = 1.0  # orthogonal to f, reused for positive and both negatives
    sel = PrototypeSelection(q, 0, [(1, q.copy()), (2, q.copy())])
    out = proto_contrastive_loss(f, sel, tau=0.1)
    assert_allclose(out.value, np.log(3.0), atol=1e-12)
    all_q = np.stack([q, q, q])
    assert out.grad @ (sel.positive - all_q.mean(axis=0)) <= 0.0


def test_contrastive_distinct_symmetric_ties():
    rng = np.random.default_rng(3)
    f = unit(rng, 5)
    # three distinct prototypes, all orthogonal to f: logits tie at zero
    basis = np.linalg.qr(rng.normal(size=(5, 5)))[0]
    cands = [basis[:, i] - (basis[:, i] @ f) * f for i in range(3)]
    cands = [c / np.linalg.norm(c) for c in cands]
    sel = PrototypeSelection(cands[0], 0, [(1, cands[1]), (2, cands[2])])
    out = proto_contrastive_loss(f, sel, tau=0.1)
    assert_allclose(out.value, np.log(3.0), atol=1e-10)
    mean_q = np.stack(cands).mean(axis=0)
    assert out.grad @ (sel.positive - mean_q) < 0.0


def test_contrastive_saturation_limit():
    f = np.array([1.0, 0.0])
    sel = PrototypeSelection(np.array([1.0, 0.0]), 0, [(1, np.array([-1.0, 0.0]))])
    out = proto_contrastive_loss(f, sel, tau=0.01)  # z0 - z1 = 200
    assert out.value < 1e-12


def test_contrastive_empty_negatives_rejected():
    with pytest.raises(ContractViolation):
        proto_contrastive_loss(np.ones(2), PrototypeSelection(np.ones(2), 0, []), 0.1)


def test_contrastive_gradient_matches_finite_differences():
    # oracle: central differences at h=1e-5, relative error < 1e-5
    rng = np.random.default_rng(4)
    h = 1e-5
    for _ in range(20):
        f = unit(rng, 8)
        sel = random_selection(rng, 8, 3)
        out = proto_contrastive_loss(f, sel, tau=0.1)
        fd = np.empty(8)
        for d in range(8):
            fp, fm = f.copy(), f.copy()
            fp[d] += h
            fm[d] -= h
            fd[d] = (
                proto_contrastive_loss(fp, sel, 0.1).value
                - proto_contrastive_loss(fm, sel, 0.1).value
            ) / (2 * h)
        rel = np.linalg.norm(out.grad - fd) / max(np.linalg.norm(out.grad), 1e-12)
        assert rel < 1e-5


def test_contrastive_value_nonnegative_and_tie_value():
    rng = np.random.default_rng(5)
    for _ in range(50):
        f = unit(rng, 6)
        sel = random_selection(rng, 6, int(rng.integers(1, 5)))
        assert proto_contrastive_loss(f, sel, 0.1).value >= 0.0


def test_contrastive_negative_order_invariance():
    rng = np.random.default_rng(6)
    f = unit(rng, 4)
    sel = random_selection(rng, 4, 3)
    flipped = PrototypeSelection(sel.positive, 0, list(reversed(sel.negatives)))
    a = proto_contrastive_loss(f, sel, 0.1)
    b = proto_contrastive_loss(f, flipped, 0.1)
    assert_allclose(a.value, b.value, atol=1e-12)
    assert_allclose(a.grad, b.grad, atol=1e-12)


def test_contrastive_rotating_toward_positive_reduces_loss():
    rng = np.random.default_rng(7)
    for _ in range(20):
        f = unit(rng, 5)
        sel = random_selection(rng, 5, 2)
        towards = sel.positive - (sel.positive @ f) * f  # tangent direction
        if np.linalg.norm(towards) < 1e-9:
            continue
        step = 1e-4 * towards / np.linalg.norm(towards)
        f2 = f + step
        f2 /= np.linalg.norm(f2)
        before = proto_contrastive_loss(f, sel, 0.1).value
        after = proto_contrastive_loss(f2, sel, 0.1).value
        assert after < before


def test_contrastive_batch_matches_per_sample_mean():
    rng = np.random.default_rng(8)
    n, d, k = 6, 5, 3
    F = np.stack([unit(rng, d) for _ in range(n)])
    pos = np.stack([unit(rng, d) for _ in range(n)])
    negs = np.stack([np.stack([unit(rng, d) for _ in range(k)]) for _ in range(n)])
    value, grad = proto_contrastive_loss_batch(F, pos, negs, tau=0.1)
    singles = [
        proto_contrastive_loss(
            F[i], PrototypeSelection(pos[i], 0, [(j, negs[i, j]) for j in range(k)]), 0.1
        )
        for i in range(n)
    ]
    assert_allclose(value, np.mean([s.value for s in singles]), atol=1e-12)
    assert_allclose(grad, np.stack([s.grad for s in singles]) / n, atol=1e-12)
