"""EMA class priors per domain, label-shift posterior correction, and
pseudo-label assignment.

The source classifier is trained under (approximately) uniform class priors,
so its generative posterior p_s(c|f) is off on a target domain whose class
marginals differ. Multiplying by the tracked prior ratio delta_target^c /
delta_source^c and renormalizing undoes that shift; pseudo-labels then
combine the corrected posterior with cosine similarity to the target class
prototypes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NotReady
from .gmm_bank import GmmBank
from .numerics import log_sum_exp, softmax_stable
from .proto_align import TargetPrototypes

#: Prior ratios are clamped into this range; early-training priors are noisy
#: and a zero source prior would otherwise produce an infinite ratio.
RATIO_CLAMP = (1e-3, 1e3)


@dataclass
class PriorTracker:
    """EMA-tracked class marginals for both domains."""

    delta_source: np.ndarray
    delta_target: np.ndarray
    alpha: float

    @classmethod
    def uniform(cls, n_classes: int, alpha: float = 0.9) -> "PriorTracker":
        u = np.full(n_classes, 1.0 / n_classes)
        return cls(u.copy(), u.copy(), alpha)

    @property
    def n_classes(self) -> int:
        return self.delta_source.shape[0]

    def update_prior(self, labels: np.ndarray, domain: str) -> None:
        """delta_iter = batch class proportions; delta <- alpha delta + (1-alpha) delta_iter."""
        if domain not in ("source", "target"):
            raise ContractViolation(f"domain must be 'source' or 'target', got {domain!r}")
        labels = np.asarray(labels)
        if labels.size == 0:
            return
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ContractViolation(f"label out of range [0, {self.n_classes})")
        delta_iter = np.bincount(labels, minlength=self.n_classes) / labels.size
        old = self.delta_source if domain == "source" else self.delta_target
        new = self.alpha * old + (1.0 - self.alpha) * delta_iter
        new /= new.sum()
        if domain == "source":
            self.delta_source = new
        else:
            self.delta_target = new

    def ratio(self) -> tuple[np.ndarray, np.ndarray]:
        """(clamped target/source prior ratio, mask of entries that hit the clamp)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(self.delta_source > 0.0, self.delta_target / self.delta_source, np.inf)
        clamped = np.clip(raw, *RATIO_CLAMP)
        return clamped, clamped != raw


def _class_posterior(bank: GmmBank, F: np.ndarray, log_adjust: np.ndarray | None) -> np.ndarray:
    """softmax_c(log p(f|c) + log_adjust_c); uniform class priors cancel."""
    log_lik = bank.class_logpdf_batch(F)
    if log_adjust is not None:
        log_lik = log_lik + log_adjust[None, :]
    log_lik -= log_sum_exp(log_lik, axis=1, keepdims=True)
    return np.exp(log_lik)


def source_class_posterior(f_t: np.ndarray, bank: GmmBank) -> np.ndarray:
    """p_s(c|f) under uniform source class priors, via the class GMMs."""
    return _class_posterior(bank, np.atleast_2d(f_t), None)[0]


def source_class_posterior_batch(F: np.ndarray, bank: GmmBank) -> np.ndarray:
    return _class_posterior(bank, F, None)


def apply_label_shift_correction(posterior: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    """Reweight a posterior by per-class prior ratios and renormalize."""
    u = np.asarray(posterior, dtype=np.float64) * np.asarray(ratio, dtype=np.float64)
    s = u.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ContractViolation("posterior/ratio product sums to zero")
    return u / s


def corrected_posterior(f_t: np.ndarray, bank: GmmBank, priors: PriorTracker) -> np.ndarray:
    """Label-shift corrected posterior p_t(c|f) = p_s(c|f) delta_t^c/delta_s^c, renormalized.

    Computed in the log domain; with equal priors the adjustment is exactly
    zero, making this the identity map on source_class_posterior.
    """
    return corrected_posterior_batch(np.atleast_2d(f_t), bank, priors)[0]


def corrected_posterior_batch(F: np.ndarray, bank: GmmBank, priors: PriorTracker) -> np.ndarray:
    ratio, _ = priors.ratio()
    return _class_posterior(bank, F, np.log(ratio))


def assign_pseudo_label(
    f_t: np.ndarray,
    bank: GmmBank,
    priors: PriorTracker,
    protos: TargetPrototypes,
) -> tuple[int, np.ndarray]:
    """Pseudo-label a target sample: argmax_c corrected posterior times the
    softmax over cosine similarities to the target prototypes.

    Classes without an initialized prototype take the neutral similarity
    share 1/|initialized|. With no initialized prototype at all the label
    falls back to the corrected posterior's argmax.
    """
    labels, scores = assign_pseudo_labels_batch(np.atleast_2d(f_t), bank, priors, protos)
    return int(labels[0]), scores[0]


def assign_pseudo_labels_batch(
    F: np.ndarray,
    bank: GmmBank,
    priors: PriorTracker,
    protos: TargetPrototypes,
) -> tuple[np.ndarray, np.ndarray]:
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    post = corrected_posterior_batch(F, bank, priors)
    init = np.flatnonzero(protos.initialized)
    if init.size == 0:
        return np.argmax(post, axis=1), post
    sims = np.empty((F.shape[0], init.size))
    for j, c in enumerate(init):
        proto = protos.means[c]
        pn = np.linalg.norm(proto)
        fn = np.linalg.norm(F, axis=1)
        if pn < 1e-12:
            raise NotReady(f"target prototype for class {c} is degenerate")
        sims[:, j] = np.clip(F @ proto / np.maximum(fn * pn, 1e-12), -1.0, 1.0)
    sim_term = np.full((F.shape[0], bank.n_classes), 1.0 / init.size)
    sim_term[:, init] = softmax_stable(sims, axis=1)
    scores = post * sim_term
    return np.argmax(scores, axis=1), scores
