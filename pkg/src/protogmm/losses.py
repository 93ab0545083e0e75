"""Training losses with explicit gradients.

Everything here is a pure function returning (value, gradient) pairs; the
gradients are what the model's reverse pass consumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import log_sum_exp
from .proto_align import PrototypeSelection


@dataclass
class LossConfig:
    tau: float = 0.1
    beta_conf: float = 0.968
    lambda_contrast: float = 1.0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ContractViolation(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.beta_conf < 1.0:
            raise ContractViolation(f"beta_conf must lie in (0, 1), got {self.beta_conf}")
        if self.lambda_contrast < 0:
            raise ContractViolation(f"lambda_contrast must be >= 0, got {self.lambda_contrast}")


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray


def confidence_weight(teacher_probs: np.ndarray, beta_conf: float) -> float:
    """Fraction of samples whose max class probability exceeds beta_conf.

    Applied as one scalar weight to the whole target batch.
    """
    teacher_probs = np.atleast_2d(np.asarray(teacher_probs, dtype=np.float64))
    if teacher_probs.shape[0] == 0:
        return 0.0
    return float(np.mean(teacher_probs.max(axis=1) > beta_conf))


def weighted_cross_entropy(logits: np.ndarray, labels: np.ndarray, weight: float) -> LossOutput:
    """Mean cross-entropy scaled by a batch weight, with d(loss)/d(logits).

    value = -w/N sum_i log softmax(logits_i)[y_i]
    grad_i = w (softmax(logits_i) - onehot(y_i)) / N
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ContractViolation(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractViolation(f"label out of range [0, {c})")
    log_probs = logits - log_sum_exp(logits, axis=1, keepdims=True)
    value = -weight * float(np.mean(log_probs[np.arange(n), labels]))
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad *= weight / n
    return LossOutput(value, grad)


def proto_contrastive_loss(f: np.ndarray, sel: PrototypeSelection, tau: float) -> LossOutput:
    """Multi-prototype InfoNCE against one positive and C-1 hard negatives.

    With z_0 = f.q+/tau and z_k = f.q-_k/tau:
        value = -log(e^{z_0} / sum_j e^{z_j})
        grad  = (sum_j p_j q_j - q+) / tau,  p = softmax(z)
    """
    if not sel.negatives:
        raise ContractViolation("contrastive loss needs at least one negative prototype")
    f = np.asarray(f, dtype=np.float64)
    protos = np.stack([sel.positive] + [q for _, q in sel.negatives])
    z = protos @ f / tau
    lse = float(log_sum_exp(z))
    p = np.exp(z - lse)
    value = lse - float(z[0])
    grad = (p @ protos - protos[0]) / tau
    return LossOutput(value, grad)


def proto_contrastive_loss_batch(
    F: np.ndarray, positives: np.ndarray, negatives: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """Batch-mean contrastive loss; gradient rows already carry the 1/N factor.

    F (N,D), positives (N,D), negatives (N,K,D) with K >= 1.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    n = F.shape[0]
    if negatives.shape[1] == 0:
        raise ContractViolation("contrastive loss needs at least one negative prototype")
    protos = np.concatenate([positives[:, None, :], negatives], axis=1)  # (N, K+1, D)
    z = np.einsum("nkd,nd->nk", protos, F) / tau
    lse = log_sum_exp(z, axis=1, keepdims=True)
    p = np.exp(z - lse)
    value = float(np.mean(lse[:, 0] - z[:, 0]))
    grad = (np.einsum("nk,nkd->nd", p, protos) - positives) / (tau * n)
    return value, grad
