"""The trainable network and its optimizer.

An MLP encoder feeds two heads: an affine classifier producing C logits and
a two-layer projection head whose output is l2-normalized into the feature
space the mixtures and prototypes live in. Gradients are hand-written
reverse mode; the optimizer is decoupled-weight-decay Adam; the teacher is
an EMA copy of the student that is never optimized directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import ZERO_NORM_EPS


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    proj_hidden: int = 64
    proj_dim: int = 64
    n_classes: int = 2

    @property
    def latent_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


@dataclass
class ForwardCache:
    """Intermediates one forward pass; consumed by the matching backward."""

    version: int
    x: np.ndarray
    enc_pre: list[np.ndarray]  # pre-activation per encoder layer
    enc_out: list[np.ndarray]  # post-ReLU per encoder layer (enc_out[-1] = latent)
    proj_pre: np.ndarray
    proj_hidden: np.ndarray
    proj_raw: np.ndarray  # pre-normalization projection output v
    proj_norm: np.ndarray  # ||v|| per row, clamped away from zero
    f: np.ndarray


class AdaptModel:
    """Encoder + classifier head + l2-normalized projection head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.version = 0
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        dims = [config.input_dim, *config.hidden_dims]
        for i in range(len(config.hidden_dims)):
            self._init_layer(rng, f"enc{i}", dims[i], dims[i + 1])
        self._init_layer(rng, "cls", config.latent_dim, config.n_classes)
        self._init_layer(rng, "proj0", config.latent_dim, config.proj_hidden)
        self._init_layer(rng, "proj1", config.proj_hidden, config.proj_dim)

    def _init_layer(self, rng: np.random.Generator, name: str, fan_in: int, fan_out: int) -> None:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        self.params[f"{name}.W"] = rng.uniform(-a, a, size=(fan_in, fan_out))
        self.params[f"{name}.b"] = np.zeros(fan_out)

    def bump(self) -> None:
        """Invalidate outstanding forward caches after a parameter mutation."""
        self.version += 1

    def copy(self) -> "AdaptModel":
        clone = AdaptModel.__new__(AdaptModel)
        clone.config = self.config
        clone.version = 0
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
        """Deterministic forward pass: (logits (N,C), f (N,D) unit-norm, cache).

        If the raw projection of a row is numerically zero (possible only
        for a degenerate parameterization such as the all-zero network), f
        is zero for that row and its backward gradient is dropped.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.config.input_dim:
            raise ContractViolation(
                f"input dim {x.shape[1]} != configured {self.config.input_dim}"
            )
        p = self.params
        h = x
        enc_pre, enc_out = [], []
        for i in range(len(self.config.hidden_dims)):
            z = h @ p[f"enc{i}.W"] + p[f"enc{i}.b"]
            h = np.maximum(z, 0.0)
            enc_pre.append(z)
            enc_out.append(h)
        logits = h @ p["cls.W"] + p["cls.b"]
        proj_pre = h @ p["proj0.W"] + p["proj0.b"]
        proj_hidden = np.maximum(proj_pre, 0.0)
        v = proj_hidden @ p["proj1.W"] + p["proj1.b"]
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        degenerate = norm < ZERO_NORM_EPS
        safe_norm = np.where(degenerate, 1.0, norm)
        f = np.where(degenerate, 0.0, v / safe_norm)
        cache = ForwardCache(self.version, x, enc_pre, enc_out, proj_pre, proj_hidden, v, safe_norm, f)
        return logits, f, cache

    def backward(
        self, cache: ForwardCache, grad_logits: np.ndarray | None, grad_f: np.ndarray | None
    ) -> dict[str, np.ndarray]:
        """Reverse pass; returns a gradient for every parameter.

        grad_f chains through the normalization Jacobian (I - u u^T)/||v||,
        then the projection head; grad_logits through the classifier head;
        the encoder accumulates both paths.
        """
        if cache.version != self.version:
            raise ContractViolation("stale forward cache: parameters changed since forward")
        p = self.params
        n = cache.x.shape[0]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        latent = cache.enc_out[-1] if cache.enc_out else cache.x
        d_latent = np.zeros((n, latent.shape[1]))

        if grad_logits is not None:
            grad_logits = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
            grads["cls.W"] += latent.T @ grad_logits
            grads["cls.b"] += grad_logits.sum(axis=0)
            d_latent += grad_logits @ p["cls.W"].T

        if grad_f is not None:
            grad_f = np.atleast_2d(np.asarray(grad_f, dtype=np.float64))
            u = cache.f
            dv = (grad_f - u * np.sum(u * grad_f, axis=1, keepdims=True)) / cache.proj_norm
            dv = np.where(np.linalg.norm(cache.proj_raw, axis=1, keepdims=True) < ZERO_NORM_EPS, 0.0, dv)
            grads["proj1.W"] += cache.proj_hidden.T @ dv
            grads["proj1.b"] += dv.sum(axis=0)
            d_ph = dv @ p["proj1.W"].T
            d_pp = d_ph * (cache.proj_pre > 0)
            grads["proj0.W"] += latent.T @ d_pp
            grads["proj0.b"] += d_pp.sum(axis=0)
            d_latent += d_pp @ p["proj0.W"].T

        d_h = d_latent
        for i in reversed(range(len(self.config.hidden_dims))):
            d_z = d_h * (cache.enc_pre[i] > 0)
            below = cache.enc_out[i - 1] if i > 0 else cache.x
            grads[f"enc{i}.W"] += below.T @ d_z
            grads[f"enc{i}.b"] += d_z.sum(axis=0)
            d_h = d_z @ p[f"enc{i}.W"].T
        return grads


@dataclass
class AdamState:
    """First/second moment accumulators for a parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.01,
    eps: float = 1e-8,
) -> bool:
    """Decoupled weight-decay Adam update, in place.

    Returns False (and leaves params/state untouched) if any gradient entry
    is non-finite.
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            return False
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


@dataclass
class TeacherStudent:
    """Student trained by backprop; teacher follows by parameter EMA."""

    student: AdaptModel
    teacher: AdaptModel
    ema_beta: float = 0.999

    @classmethod
    def create(cls, config: ModelConfig, seed: int, ema_beta: float = 0.999) -> "TeacherStudent":
        student = AdaptModel(config, seed=seed)
        return cls(student=student, teacher=student.copy(), ema_beta=ema_beta)

    def ema_teacher_update(self) -> None:
        """theta_teacher <- beta theta_teacher + (1-beta) theta_student."""
        b = self.ema_beta
        for k, tp in self.teacher.params.items():
            tp *= b
            tp += (1.0 - b) * self.student.params[k]
        self.teacher.bump()
