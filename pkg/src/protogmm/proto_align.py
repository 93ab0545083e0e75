"""Hard prototype selection and target-side state.

Source prototypes are the per-class GMM component means. For a sample with
(pseudo-)label y, the positive prototype is the mean of y's most responsible
component; the hard negative for every other class is the mean of that
class's most responsible component, i.e. the most confusable one. The target
side keeps a bounded FIFO bank of reliable embeddings per class and an EMA
class prototype derived from it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NotReady
from .gmm_bank import FifoBuffer, GmmBank
from .numerics import ZERO_NORM_EPS

TargetBank = FifoBuffer


@dataclass
class PrototypeSelection:
    """One positive prototype plus one hard negative per foreign class."""

    positive: np.ndarray
    positive_component: int
    negatives: list[tuple[int, np.ndarray]]  # (class, component mean), one per class != own


@dataclass
class TargetPrototypes:
    """EMA class prototypes over reliable target embeddings."""

    means: np.ndarray  # (C, D)
    initialized: np.ndarray  # (C,) bool

    @classmethod
    def empty(cls, n_classes: int, dim: int) -> "TargetPrototypes":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes, dtype=bool))

    @property
    def any_initialized(self) -> bool:
        return bool(self.initialized.any())


def _best_components(bank: GmmBank, F: np.ndarray) -> np.ndarray:
    """argmax_m p(m | f, c) for every sample and class, shape (C, N).

    Ties cannot occur generically; numpy argmax takes the lowest index,
    which keeps the choice deterministic when they do.
    """
    F = np.atleast_2d(F)
    best = np.empty((bank.n_classes, F.shape[0]), dtype=np.int64)
    for c in range(bank.n_classes):
        best[c] = np.argmax(bank.component_posterior_batch(F, c), axis=1)
    return best


def select_source_prototypes(f_s: np.ndarray, y_s: int, bank: GmmBank) -> PrototypeSelection:
    """Hard positive/negative component means for a labeled source sample."""
    if not bank.initialized():
        missing = [c for c in range(bank.n_classes) if not bank.initialized(c)]
        raise NotReady(f"GMMs not initialized for classes {missing}")
    if not 0 <= y_s < bank.n_classes:
        raise ContractViolation(f"label {y_s} out of range")
    best = _best_components(bank, np.atleast_2d(f_s))[:, 0]
    positive = bank.gmms[y_s].means[best[y_s]].copy()
    negatives = [
        (c, bank.gmms[c].means[best[c]].copy()) for c in range(bank.n_classes) if c != y_s
    ]
    return PrototypeSelection(positive, int(best[y_s]), negatives)


def select_target_prototypes(f_t: np.ndarray, y_hat: int, bank: GmmBank) -> PrototypeSelection:
    """Same selection rule, driven by the target sample's pseudo-label."""
    return select_source_prototypes(f_t, y_hat, bank)


def select_prototypes_batch(
    bank: GmmBank, F: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized selection: returns positives (N, D) and negatives (N, C-1, D).

    Negative order is ascending foreign class index; the loss is invariant
    to it.
    """
    if not bank.initialized():
        raise NotReady("GMMs not initialized for every class")
    F = np.atleast_2d(F)
    labels = np.asarray(labels)
    n, c_all = F.shape[0], bank.n_classes
    best = _best_components(bank, F)  # (C, N)
    chosen = np.empty((c_all, n, bank.dim))
    for c in range(c_all):
        chosen[c] = bank.gmms[c].means[best[c]]
    positives = chosen[labels, np.arange(n)]
    foreign = np.stack([np.delete(np.arange(c_all), y) for y in range(c_all)])  # (C, C-1)
    negatives = chosen[foreign[labels], np.arange(n)[:, None]]
    return positives, negatives


def batch_class_mean(
    features: np.ndarray, pseudo_labels: np.ndarray, n_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean embedding within a minibatch.

    Returns (means (C, D), present (C,)); classes absent from the batch are
    flagged and their mean row is zero.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    pseudo_labels = np.asarray(pseudo_labels)
    if pseudo_labels.size and (pseudo_labels.min() < 0 or pseudo_labels.max() >= n_classes):
        raise ContractViolation(f"pseudo-label out of range [0, {n_classes})")
    means = np.zeros((n_classes, features.shape[1]))
    present = np.zeros(n_classes, dtype=bool)
    for c in range(n_classes):
        mask = pseudo_labels == c
        if mask.any():
            means[c] = features[mask].mean(axis=0)
            present[c] = True
    return means, present


def update_target_bank(
    bank: TargetBank,
    features: np.ndarray,
    pseudo_labels: np.ndarray,
    means: np.ndarray,
    present: np.ndarray,
    top_k: int,
) -> None:
    """Admit the top_k embeddings per class by cosine similarity to the
    class's batch mean; FIFO eviction beyond capacity. Ties break toward
    the lower sample index.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    pseudo_labels = np.asarray(pseudo_labels)
    for c in range(bank.n_classes):
        if not present[c]:
            continue
        members = features[pseudo_labels == c]
        norms = np.linalg.norm(members, axis=1)
        mean_norm = np.linalg.norm(means[c])
        denom = np.maximum(norms * mean_norm, ZERO_NORM_EPS)
        sims = members @ means[c] / denom
        order = np.argsort(-sims, kind="stable")
        keep = members[order[:top_k]]
        bank.push(keep, np.full(keep.shape[0], c, dtype=np.int64))


def update_target_prototypes(
    protos: TargetPrototypes, means: np.ndarray, present: np.ndarray, alpha: float
) -> None:
    """EMA update mu_c <- alpha mu_c + (1-alpha) mu'_c for each fresh class.

    The first update of a class adopts mu'_c directly and marks it
    initialized.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha {alpha} outside [0, 1]")
    for c in np.flatnonzero(present):
        if protos.initialized[c]:
            protos.means[c] = alpha * protos.means[c] + (1.0 - alpha) * means[c]
        else:
            protos.means[c] = means[c].copy()
            protos.initialized[c] = True
