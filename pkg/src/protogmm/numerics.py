"""Stable scalar/vector kernels used by every other module.

All arithmetic is float64. Functions are pure and never mutate their
arguments.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DegenerateInput

#: Norms below this are treated as true zero vectors rather than rounding.
ZERO_NORM_EPS = 1e-12


def l2_normalize(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (v / ||v||, ||v||).

    The norm is returned alongside because the normalization Jacobian
    (I - u u^T) / ||v|| needs it when chaining gradients.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_EPS:
        raise DegenerateInput(f"cannot normalize vector with norm {norm!r}")
    return v / norm, norm


def log_sum_exp(xs: np.ndarray, axis: int | None = None, keepdims: bool = False) -> np.ndarray:
    """log(sum(exp(xs))) via max-shift; finite for any finite input."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ContractViolation("log_sum_exp of an empty sequence")
    m = np.max(xs, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True))
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out if out.ndim else float(out)


def diag_gaussian_logpdf(f: np.ndarray, mean: np.ndarray, var: np.ndarray) -> float:
    """log N(f; mean, diag(var)) = -1/2 sum_d [log(2 pi var_d) + (f_d-mean_d)^2/var_d]."""
    f = np.asarray(f, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if f.shape != mean.shape or f.shape != var.shape:
        raise ContractViolation(
            f"dimension mismatch: f {f.shape}, mean {mean.shape}, var {var.shape}"
        )
    diff = f - mean
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * var) + diff * diff / var))


def diag_gaussian_logpdf_batch(F: np.ndarray, means: np.ndarray, vars_: np.ndarray) -> np.ndarray:
    """Vectorized log N over a batch: F (N,D), means (M,D), vars (M,D) -> (N,M)."""
    F = np.asarray(F, dtype=np.float64)
    diff = F[:, None, :] - means[None, :, :]
    maha = np.sum(diff * diff / vars_[None, :, :], axis=2)
    log_norm = np.sum(np.log(2.0 * np.pi * vars_), axis=1)
    return -0.5 * (log_norm[None, :] + maha)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (||a|| ||b||), clamped to [-1, 1] so exp() downstream stays sane."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise DegenerateInput("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def softmax_stable(xs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax; entries positive, sums to 1 along axis."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ContractViolation("softmax of an empty sequence")
    shifted = xs - np.max(xs, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)
