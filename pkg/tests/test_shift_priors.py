import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from protogmm.errors import ContractViolation, NotReady
from protogmm.gmm_bank import ClassGmm, GmmBank
from protogmm.proto_align import TargetPrototypes
from protogmm.shift_priors import (
    PriorTracker,
    apply_label_shift_correction,
    assign_pseudo_label,
    assign_pseudo_labels_batch,
    corrected_posterior,
    source_class_posterior,
)


def single_mode_bank(means, var=1.0):
    """One-component GMM per class at the given means."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n_classes, d = means.shape
    bank = GmmBank(n_classes=n_classes, n_components=1, dim=d)
    for c in range(n_classes):
        bank.gmms[c] = ClassGmm(c, np.array([1.0]), means[c : c + 1], np.full((1, d), var))
    return bank


def random_bank(rng, n_classes, m, d):
    bank = GmmBank(n_classes=n_classes, n_components=m, dim=d)
    for c in range(n_classes):
        w = rng.uniform(0.2, 1.0, m)
        bank.gmms[c] = ClassGmm(c, w / w.sum(), rng.normal(size=(m, d)), rng.uniform(0.3, 2.0, (m, d)))
    return bank


# -- prior updates -----------------------------------------------------------


def test_update_prior_ema_arithmetic():
    t = PriorTracker(np.array([0.5, 0.5]), np.array([0.5, 0.5]), alpha=0.9)
    t.update_prior(np.array([0, 1, 1, 1, 1, 1, 1, 0, 0, 1]), "source")  # proportions (0.3, 0.7)
    assert_allclose(t.delta_source, [0.48, 0.52], atol=1e-12)


def test_update_prior_alpha_one_frozen():
    t = PriorTracker(np.array([0.3, 0.7]), np.array([0.5, 0.5]), alpha=1.0)
    t.update_prior(np.array([0, 0, 0]), "source")
    assert_allclose(t.delta_source, [0.3, 0.7], atol=0)


def test_update_prior_alpha_zero_is_batch():
    t = PriorTracker.uniform(3, alpha=0.0)
    t.update_prior(np.array([0, 0, 1, 2]), "target")
    assert_allclose(t.delta_target, [0.5, 0.25, 0.25], atol=1e-12)


def test_update_prior_empty_batch_noop():
    t = PriorTracker.uniform(2, alpha=0.5)
    t.update_prior(np.empty(0, dtype=int), "source")
    assert_allclose(t.delta_source, [0.5, 0.5], atol=0)


def test_update_prior_bad_domain_and_label():
    t = PriorTracker.uniform(2, alpha=0.5)
    with pytest.raises(ContractViolation):
        t.update_prior(np.array([0]), "elsewhere")
    with pytest.raises(ContractViolation):
        t.update_prior(np.array([2]), "source")


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_priors_stay_distributions_under_interleaving(seed):
    rng = np.random.default_rng(seed)
    t = PriorTracker.uniform(3, alpha=float(rng.uniform(0, 1)))
    for _ in range(8):
        domain = "source" if rng.random() < 0.5 else "target"
        labels = rng.integers(0, 3, size=int(rng.integers(0, 9)))
        t.update_prior(labels, domain)
        for vec in (t.delta_source, t.delta_target):
            assert np.all(vec >= 0)
            assert abs(vec.sum() - 1.0) < 1e-9


# -- source posterior -----------------------------------------------------------


def test_source_posterior_symmetry():
    bank = single_mode_bank([[1.0, 0.0], [-1.0, 0.0]])
    post = source_class_posterior(np.array([0.0, 3.7]), bank)  # on the symmetry axis
    assert_allclose(post, [0.5, 0.5], atol=1e-12)


def test_source_posterior_confident_at_mode():
    # oracle: direct Bayes with uniform priors in linear space
    bank = single_mode_bank([[6.0, 0.0], [-6.0, 0.0]], var=0.5)
    f = np.array([6.0, 0.0])
    post = source_class_posterior(f, bank)
    dens = np.array([np.exp(bank.class_conditional_logpdf(f, c)) for c in range(2)])
    assert_allclose(post, dens / dens.sum(), atol=1e-12)
    assert post[0] > 0.99
    assert_allclose(post.sum(), 1.0, atol=1e-9)


def test_source_posterior_requires_all_classes():
    bank = GmmBank(n_classes=2, n_components=1, dim=2)
    bank.gmms[0] = ClassGmm(0, np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(NotReady):
        source_class_posterior(np.zeros(2), bank)


# -- corrected posterior -----------------------------------------------------------


def test_equal_priors_identity_is_exact():
    rng = np.random.default_rng(1)
    bank = random_bank(rng, 3, 2, 4)
    priors = PriorTracker.uniform(3, alpha=0.9)
    for _ in range(10):
        f = rng.normal(size=4)
        base = source_class_posterior(f, bank)
        corr = corrected_posterior(f, bank, priors)
        assert np.array_equal(corr, base)  # bit-exact, not approximate


def test_worked_two_class_ratio_example():
    out = apply_label_shift_correction(np.array([0.5, 0.5]), np.array([2.0, 1.0]))
    assert_allclose(out, [2 / 3, 1 / 3], rtol=0, atol=1e-12)


def test_corrected_matches_linear_space_oracle():
    # oracle: ratio-and-renormalize in linear space on the uncorrected posterior
    rng = np.random.default_rng(2)
    bank = random_bank(rng, 4, 3, 3)
    priors = PriorTracker(
        delta_source=np.array([0.1, 0.2, 0.3, 0.4]),
        delta_target=np.array([0.4, 0.3, 0.2, 0.1]),
        alpha=0.9,
    )
    ratio, clamped = priors.ratio()
    assert not clamped.any()
    for _ in range(20):
        f = rng.normal(size=3)
        expected = apply_label_shift_correction(source_class_posterior(f, bank), ratio)
        assert_allclose(corrected_posterior(f, bank, priors), expected, rtol=0, atol=1e-12)


def test_zero_source_prior_ratio_clamped():
    priors = PriorTracker(
        delta_source=np.array([0.0, 1.0]), delta_target=np.array([0.5, 0.5]), alpha=0.9
    )
    ratio, clamped = priors.ratio()
    assert ratio[0] == 1e3 and clamped[0]
    assert not clamped[1]


def test_corrected_posterior_monotone_in_target_prior():
    rng = np.random.default_rng(3)
    bank = random_bank(rng, 3, 2, 3)
    f = rng.normal(size=3)
    base = PriorTracker(np.full(3, 1 / 3), np.full(3, 1 / 3), alpha=0.9)
    bumped = PriorTracker(np.full(3, 1 / 3), np.array([1 / 3 + 0.2, 1 / 3, 1 / 3]), alpha=0.9)
    assert corrected_posterior(f, bank, bumped)[0] >= corrected_posterior(f, bank, base)[0]


# -- pseudo-label assignment ----------------------------------------------------


def test_pseudo_label_posterior_dominates_under_equal_similarity():
    # corrected posterior (0.9, 0.1); both prototypes identical so the
    # similarity softmax is (0.5, 0.5) and cannot flip the argmax
    d = 2.0 * np.sqrt(np.log(9.0) / 2.0)
    bank = single_mode_bank([[0.0, 0.0], [d, 0.0]], var=1.0)
    priors = PriorTracker.uniform(2, alpha=0.9)
    protos = TargetPrototypes(means=np.array([[1.0, 0.0], [1.0, 0.0]]), initialized=np.array([True, True]))
    f = np.array([0.0, 0.0])
    assert_allclose(corrected_posterior(f, bank, priors), [0.9, 0.1], atol=1e-12)
    label, scores = assign_pseudo_label(f, bank, priors, protos)
    assert label == 0
    assert_allclose(scores, [0.45, 0.05], atol=1e-12)


def test_pseudo_label_similarity_breaks_tie():
    bank = single_mode_bank([[1.0, 0.0], [1.0, 0.0]])  # identical classes -> uniform posterior
    priors = PriorTracker.uniform(2, alpha=0.9)
    protos = TargetPrototypes(
        means=np.array([[0.0, 1.0], [1.0, 0.0]]), initialized=np.array([True, True])
    )
    f = np.array([1.0, 0.0])  # equals prototype of class 1
    label, _ = assign_pseudo_label(f, bank, priors, protos)
    assert label == 1


def test_pseudo_label_matches_brute_force_enumeration():
    # oracle: score every class directly from its definition
    rng = np.random.default_rng(4)
    bank = random_bank(rng, 3, 2, 4)
    priors = PriorTracker(
        delta_source=np.array([0.2, 0.3, 0.5]), delta_target=np.array([0.5, 0.3, 0.2]), alpha=0.9
    )
    protos = TargetPrototypes(means=rng.normal(size=(3, 4)), initialized=np.array([True, True, True]))
    for _ in range(30):
        f = rng.normal(size=4)
        post = corrected_posterior(f, bank, priors)
        cos = np.array([
            float(protos.means[c] @ f / (np.linalg.norm(protos.means[c]) * np.linalg.norm(f)))
            for c in range(3)
        ])
        sim = np.exp(cos) / np.exp(cos).sum()
        expected_scores = post * sim
        label, scores = assign_pseudo_label(f, bank, priors, protos)
        assert label == int(np.argmax(expected_scores))
        assert_allclose(scores, expected_scores, atol=1e-10)
        # positive rescaling cannot change the winner
        assert int(np.argmax(3.7 * expected_scores)) == label


def test_pseudo_label_partial_prototypes_neutral_share():
    rng = np.random.default_rng(5)
    bank = random_bank(rng, 3, 2, 3)
    priors = PriorTracker.uniform(3, alpha=0.9)
    protos = TargetPrototypes.empty(3, 3)
    protos.means[1] = rng.normal(size=3)
    protos.initialized[1] = True
    f = rng.normal(size=3)
    _, scores = assign_pseudo_label(f, bank, priors, protos)
    post = corrected_posterior(f, bank, priors)
    # initialized set has size 1: its softmax share is 1, matching the
    # neutral 1/|initialized| handed to uninitialized classes
    assert_allclose(scores, post, atol=1e-12)


def test_pseudo_label_fallback_without_prototypes():
    rng = np.random.default_rng(6)
    bank = random_bank(rng, 3, 2, 3)
    priors = PriorTracker.uniform(3, alpha=0.9)
    protos = TargetPrototypes.empty(3, 3)
    f = rng.normal(size=3)
    label, scores = assign_pseudo_label(f, bank, priors, protos)
    post = corrected_posterior(f, bank, priors)
    assert label == int(np.argmax(post))
    assert_allclose(scores, post, atol=0)


def test_batch_assignment_matches_single():
    rng = np.random.default_rng(7)
    bank = random_bank(rng, 3, 2, 4)
    priors = PriorTracker(np.array([0.3, 0.3, 0.4]), np.array([0.5, 0.25, 0.25]), alpha=0.9)
    protos = TargetPrototypes(means=rng.normal(size=(3, 4)), initialized=np.array([True, False, True]))
    F = rng.normal(size=(9, 4))
    labels, scores = assign_pseudo_labels_batch(F, bank, priors, protos)
    for i in range(9):
        li, si = assign_pseudo_label(F[i], bank, priors, protos)
        assert labels[i] == li
        assert_allclose(scores[i], si, atol=1e-12)
